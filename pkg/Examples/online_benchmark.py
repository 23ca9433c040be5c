import logging
import os

from deepo_lqt import DeePOError, ExperimentHarness

"""
Use case:  I want to watch online DeePO close the optimality gap on a single trajectory.
This example shortens the benchmark protocol to one run and prints the gap every 500 steps.
"""

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger("online_benchmark_example")

def main():
    try:
        script_dir = os.path.dirname(__file__)
        config_path = os.path.join(script_dir, 'configs', 'benchmark.yaml')
        harness = ExperimentHarness.from_yaml(config_path, runs=1)
        artifacts = harness.online.run()

        gaps = artifacts.frames["online_gap"]
        for mode, frame in gaps.groupby("mode"):
            print(f"--- {mode} actuation ---")
            for _, row in frame.iloc[::500].iterrows():
                print(f"t={int(row['t']):5d}  gap={row['gap']:.4e}  |x|={row['norm_x']:.3f}")
        for reason in artifacts.aborted:
            logger.warning(f"Aborted: {reason}")

    except DeePOError as e:
        logger.error(f"Online experiment failed: {e}")

if __name__ == "__main__":
    main()
