#!/usr/bin/env python3
"""
Setup script for the differential K-theory desk engine
Installs dependencies, prepares the report directory and runs a quick self-test
"""

import subprocess
import sys
import os
from pathlib import Path


def run_command(command, description):
    """Run a command and handle errors."""
    print(f"🔄 {description}...")
    try:
        subprocess.run(command, shell=True, check=True, capture_output=True, text=True, encoding='utf-8', errors='replace')
        print(f"✅ {description} completed")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ {description} failed: {e}")
        print(f"Error output: {e.stderr or e.stdout}")
        return False
    except Exception as ex:
        print(f"❌ An unexpected error occurred while running command '{command}': {ex}")
        return False


def check_project_files():
    """Config, battery families and example manifests must be present."""
    missing = [name for name in ("config.yaml", "families.yaml", "manifests/monopole.yaml") if not Path(name).exists()]
    for name in missing:
        print(f"❌ {name} not found")
    return not missing


def write_env_file(threads):
    """Seed .env with the default worker count unless one exists."""
    env_file = Path(".env")
    if env_file.exists():
        print("✅ Keeping existing .env")
        return
    env_file.write_text(f"DKDESK_THREADS={threads}\n", encoding="utf-8")
    print(f"✅ Wrote .env (DKDESK_THREADS={threads})")


def main():
    """Main setup function."""
    print("🧮 Differential K-theory Desk Engine Setup")
    print("=" * 40)

    if sys.version_info < (3, 9):
        print("❌ Python 3.9 or higher is required")
        return False

    print(f"✅ Python {sys.version.split()[0]} detected")

    if not Path("requirements.txt").exists() or not check_project_files():
        print("❌ Project files missing. Make sure you're in the project directory.")
        return False

    if not run_command(f"{sys.executable} -m pip install -r requirements.txt", "Installing Python dependencies"):
        print("💡 Try upgrading pip: python -m pip install --upgrade pip")
        return False

    reports_dir = Path("reports")
    reports_dir.mkdir(exist_ok=True)
    print("✅ Created reports directory")
    write_env_file(min(4, os.cpu_count() or 1))

    if not run_command(f"{sys.executable} main.py selftest --filter flux", "Running flux self-test"):
        print("⚠️  Quick self-test failed; run `python main.py selftest` for the full report")

    print("\n🎉 Setup completed!")
    print("\nNext steps:")
    print("1. Run the acceptance battery:")
    print("   python main.py selftest")
    print("\n2. Run a manifest:")
    print("   python main.py run manifests/monopole.yaml")
    print("\n3. Run the unit tests:")
    print("   pytest")

    return True


if __name__ == "__main__":
    if len(sys.argv) > 1:
        # Invoked by a build backend (pip install .); metadata lives in pyproject.toml
        from setuptools import setup
        setup()
        sys.exit(0)
    success = main()
    if not success:
        sys.exit(1)
