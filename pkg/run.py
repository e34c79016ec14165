""" Simple launcher script for the point cloud quality assessment CLI. """
import sys

from src.main import main

if __name__ == "__main__":
    sys.exit(main())
