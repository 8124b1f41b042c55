"""Thin launcher script delegating to the package entrypoint."""

from chlog.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
