"""
Install flowcount's dependencies, prepare the working directories and check
the pipeline on a tiny simulated crowd.

Usage:
    python setup.py            # everything
    python setup.py --no-tests # skip the test suite
"""
import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent
MIN_PYTHON = (3, 8)
WORK_DIRS = ("datasets", "runs")
SMOKE_DATASET = ROOT / "datasets" / "smoke"
SMOKE_ARGS = "--rows 4 --cols 4 --frames 12 --agents 20 --seed 0"


def step(label, command):
    """Run one shell step from the repo root; True when it exits cleanly"""
    print(f"\n🔄 {label}...")
    proc = subprocess.run(command, shell=True, cwd=ROOT, capture_output=True, text=True)
    if proc.returncode != 0:
        print(f"❌ {label} failed (exit {proc.returncode})")
        detail = (proc.stderr or proc.stdout).strip()
        if detail:
            print(detail.splitlines()[-1])
        return False
    print(f"✅ {label}")
    last = proc.stdout.strip().splitlines()
    if last:
        print(f"   {last[-1]}")
    return True


def python_ok():
    found = sys.version_info[:2]
    if found < MIN_PYTHON:
        print(f"❌ flowcount needs Python {MIN_PYTHON[0]}.{MIN_PYTHON[1]}+, found {found[0]}.{found[1]}")
        return False
    print(f"🐍 Python {found[0]}.{found[1]}")
    return True


def install():
    requirements = ROOT / "requirements.txt"
    if not requirements.is_file():
        print(f"❌ missing {requirements.name}")
        return False
    return step("Installing requirements", f'"{sys.executable}" -m pip install -r "{requirements}"')


def make_dirs():
    for name in WORK_DIRS:
        (ROOT / name).mkdir(parents=True, exist_ok=True)
        print(f"📁 {name}/")
    return True


def smoke():
    if SMOKE_DATASET.exists():
        print(f"\nℹ️  {SMOKE_DATASET.relative_to(ROOT)} already exists, keeping it")
        return True
    return (
        step("Simulating a smoke-test crowd",
             f'"{sys.executable}" flowcount.py simulate --out "{SMOKE_DATASET}" {SMOKE_ARGS}')
        and step("Counting it with ground-truth flows",
                 f'"{sys.executable}" flowcount.py eval --dataset "{SMOKE_DATASET}" --oracle')
    )


def tests():
    return step("Running the test suite", f'"{sys.executable}" -m pytest tests/ -q')


NEXT_STEPS = """
🎉 flowcount is ready.

📋 Try next:

  🏋️  Train a flow regressor on a lanes crowd
      python flowcount.py simulate --out datasets/lanes --frames 120 --seed 1
      python flowcount.py train --dataset datasets/lanes --v 1 --steps 500 --out runs/combi
      python flowcount.py eval --dataset datasets/lanes --checkpoint runs/combi/model.ckpt

  🎯 Annotate patches chosen by conservation violations
      python flowcount.py train-active --dataset datasets/lanes --patch-n 4 --al-iters 5 --out runs/active
      python flowcount.py export-plots runs/active/curve.csv --out runs/plots

  📚 docs/architecture.md explains the data flow; README.md lists every command.
  🔧 FLOWCOUNT_THREADS=4 scores keyframes on four threads.
"""


def main():
    parser = argparse.ArgumentParser(description="Set up flowcount")
    parser.add_argument("--no-tests", action="store_true", help="skip the test suite")
    args = parser.parse_args()

    print("🚀 flowcount setup")
    print("=" * 50)

    if not (python_ok() and make_dirs()):
        sys.exit(1)
    if not install():
        print("\n⚠️  Dependencies did not install; flowcount needs every package in requirements.txt.")
        sys.exit(1)
    if not smoke():
        print("⚠️  The smoke run failed; rerun it with --log-level DEBUG to see why.")
    if not args.no_tests and not tests():
        print("⚠️  Some tests failed.")

    print(NEXT_STEPS)


if __name__ == "__main__":
    main()
