import os
import sys

# Ensure this directory is in path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

try:
    from main import main
except ImportError as e:
    print("Error: Could not import the pageseg CLI.")
    print("Make sure the dependencies in requirements.txt are installed.")
    print(f"Details: {e}")
    sys.exit(1)

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
