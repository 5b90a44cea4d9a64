import sys
from pathlib import Path

# make `from helpers import ...` work regardless of invocation directory
sys.path.insert(0, str(Path(__file__).parent))
