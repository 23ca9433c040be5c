import logging
import os

from deepo_lqt import DeePOError, ExperimentHarness, emit_summary

"""
Use case:  How fast does offline DeePO converge on pre-collected data, and does the
learned policy track as well as certainty equivalence?  This example loads the benchmark
protocol, runs the offline experiment with three Monte Carlo runs and prints the summary.
"""

# 1. SETUP LOGGING
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger("offline_benchmark_example")

def main():
    # 2. INITIALIZE HARNESS
    try:
        script_dir = os.path.dirname(__file__)
        config_path = os.path.join(script_dir, 'configs', 'benchmark.yaml')
        harness = ExperimentHarness.from_yaml(config_path, runs=3)
        logger.info(f"Loaded {harness.config!r}")

        # 3. RUN AND REPORT
        artifacts = harness.offline.run()
        print(emit_summary(artifacts))
        for family, path in artifacts.files.items():
            logger.info(f"{family}: {path}")

    except DeePOError as e:
        logger.error(f"Offline experiment failed: {e}")

if __name__ == "__main__":
    main()
