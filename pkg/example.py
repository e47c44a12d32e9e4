#!/usr/bin/env python3
"""
plugnet Example Usage Script

Runs the benign flow and the sharing attack, then scores the entropy of
the message fields in the benign trace.
"""

import sys
import os

# Add the src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from plugnet import PlugNet, build_config, classify_trace_fields


def main():
    """Main example function."""
    print("plugnet - Smart-Plug Cloud Protocol Emulation")
    print("=" * 50)

    app = PlugNet(output_dir="output", verbose=False)

    # Example 1: benign pairing, binding, authentication and control
    print("Example 1: Benign scenario")
    print("-" * 30)
    config = build_config({'scenario': 'benign', 'seed': 7, 'output_dir': 'output/benign'})
    result = app.run_scenario(config)
    if result['status'] == 'success':
        print(f"✓ {result['checks_passed']}/{result['checks_total']} checks passed, "
              f"{result['trace_records']} trace records")
    else:
        print(f"✗ {result['error']}")
    print()

    # Example 2: sharing attack against the unpatched and the patched server
    print("Example 2: Sharing attack")
    print("-" * 30)
    for scenario in ("sharing-attack", "sharing-attack-patched"):
        config = build_config({'scenario': scenario, 'seed': 7, 'output_dir': f'output/{scenario}'})
        result = app.run_scenario(config)
        print(f"  {scenario}: outcome {result.get('outcome')}, verified {result['passed']}")
    print()

    # Example 3: which fields look like key material?
    print("Example 3: Field entropy of the benign trace")
    print("-" * 30)
    report = classify_trace_fields(os.path.join('output', 'benign', 'trace.jsonl'))
    for field in report.fields:
        marker = "*" if field.flagged else " "
        print(f"  {marker} {field.name:<28s} {field.bits_per_byte:5.2f} bits/byte ({field.byte_count} bytes)")

    # Example 4: seed sweep
    print()
    print("Example 4: Hijack over seeds 1-5")
    print("-" * 30)
    sweep = PlugNet(output_dir="output/hijack-sweep", verbose=False)
    base = build_config({'scenario': 'hijack', 'seed': 1})
    sweep.print_summary(sweep.run_seed_sweep(base, list(range(1, 6))))


if __name__ == "__main__":
    main()
