"""
Verification script to check that the low-rank QTT experiments can run.
"""
import os
import sys
import config

def check_setup():
    """Check packages, configuration values and the output directory."""
    print("=" * 60)
    print("QTT Dynamical Low-Rank Setup Verification")
    print("=" * 60)

    issues = []
    warnings = []

    # Check Python version
    print("\n1. Checking Python version...")
    if sys.version_info < (3, 9):
        issues.append("Python 3.9 or higher is required")
        print("   ❌ Python version too old")
    else:
        print(f"   ✓ Python {sys.version_info.major}.{sys.version_info.minor}")

    # Check dependencies
    print("\n2. Checking dependencies...")
    required_packages = ['numpy', 'scipy', 'pandas', 'dotenv', 'tqdm']

    for package in required_packages:
        try:
            module = __import__(package)
            version = getattr(module, "__version__", "")
            print(f"   ✓ {package} {version}".rstrip())
        except ImportError:
            issues.append(f"Missing package: {package}")
            print(f"   ❌ {package} not installed")

    try:
        import pytest
        print(f"   ✓ pytest {pytest.__version__}")
    except ImportError:
        warnings.append("pytest not installed (needed for the test suite only)")
        print("   ⚠️  pytest not installed (optional)")

    # Check configuration values
    print("\n3. Checking configuration...")
    if config.DEFAULT_EPS_IN > config.DEFAULT_EPS:
        warnings.append(f"QTT_EPS_IN={config.DEFAULT_EPS_IN} is larger than QTT_EPS={config.DEFAULT_EPS}")
        print("   ⚠️  internal tolerance larger than the final tolerance")
    else:
        print(f"   ✓ eps={config.DEFAULT_EPS:.0e}, eps_in={config.DEFAULT_EPS_IN:.0e}")

    if config.DEFAULT_R_MIN > config.DEFAULT_R_MAX:
        issues.append(f"QTT_R_MIN={config.DEFAULT_R_MIN} exceeds QTT_R_MAX={config.DEFAULT_R_MAX}")
        print("   ❌ rank floor above rank cap")
    else:
        print(f"   ✓ ranks in [{config.DEFAULT_R_MIN}, {config.DEFAULT_R_MAX}]")

    print(f"   ✓ log level {config.LOG_LEVEL}, CGS tolerance {config.CGS_TOL:.0e}")

    # Check output directory
    print("\n4. Checking output directory...")
    try:
        os.makedirs(config.OUTPUT_PATH, exist_ok=True)
        marker = os.path.join(config.OUTPUT_PATH, ".write_test")
        with open(marker, "w") as f:
            f.write("ok")
        os.remove(marker)
        print(f"   ✓ {os.path.abspath(config.OUTPUT_PATH)} is writable")
    except OSError as e:
        issues.append(f"Output directory not writable: {e}")
        print(f"   ❌ {config.OUTPUT_PATH} not writable")

    # Check that the library imports
    print("\n5. Checking library modules...")
    for module in ['quantize', 'matalg', 'ttcore', 'ttopbuild', 'stepper', 'dlra', 'problems', 'harness']:
        try:
            __import__(module)
            print(f"   ✓ {module}")
        except Exception as e:
            issues.append(f"Cannot import {module}: {e}")
            print(f"   ❌ {module}: {e}")

    # Summary
    print("\n" + "=" * 60)
    print("Summary")
    print("=" * 60)

    if issues:
        print("\n❌ Issues found:")
        for issue in issues:
            print(f"   - {issue}")
        print("\nPlease fix these issues before running the experiments.")
        return False
    else:
        print("\n✓ No critical issues found!")

    if warnings:
        print("\n⚠️  Warnings:")
        for warning in warnings:
            print(f"   - {warning}")

    print("\n" + "=" * 60)
    print("Setup verification complete!")
    print("=" * 60)

    if not issues:
        print("\nYou can now run an experiment with:")
        print("   python harness.py burgers --ic shock_propagation --flavor X --scheme AP")

    return len(issues) == 0

if __name__ == "__main__":
    success = check_setup()
    sys.exit(0 if success else 1)
