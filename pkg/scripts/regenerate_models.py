#!/usr/bin/env python3
"""Rebuild the shipped benchmark model files from the zoo builders."""
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from cimsched import zoo  # noqa: E402


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "..", "src", "cimsched", "models")
    os.makedirs(out_dir, exist_ok=True)
    for name in zoo.BUILDERS:
        path = os.path.join(out_dir, f"{name}.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(zoo.model_text(name))
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
