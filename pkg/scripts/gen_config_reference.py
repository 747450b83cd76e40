"""Regenerate docs/config_reference.md from the configuration schema."""

from pathlib import Path

from bernflow.config import reference_markdown
from bernflow.io import atomic_write_text

if __name__ == "__main__":
    target = Path(__file__).resolve().parent.parent / "docs" / "config_reference.md"
    atomic_write_text(target, reference_markdown())
    print(f"wrote {target}")
