"""Regenerate src/inferbench/data/score_default.yaml.

Normalization coefficients are set so that the default suite, run on the
default synthetic backend with seed 0 and a simulated clock, scores exactly
``scale``.
"""

from pathlib import Path

from inferbench.backends.synthetic import SyntheticBackend
from inferbench.clock import SimulatedClock
from inferbench.core import load_suite, make_test_id
from inferbench.harness import run_suite
from inferbench.scoring import ScoreConfig, calibrate, default_categories, final_score

DEFAULT_ERROR_REFERENCE = 0.01

OUT = Path(__file__).resolve().parents[1] / "src" / "inferbench" / "data" / "score_default.yaml"


def main() -> None:
    suite = load_suite()
    cats, memory = default_categories(suite.workloads)
    eref = {make_test_id(wl, m): DEFAULT_ERROR_REFERENCE
            for wl in suite.workloads if wl.accuracy_check for m in wl.sorted_modes()}
    base = ScoreConfig(categories=cats, error_reference=eref, memory_test=memory)
    outcomes = run_suite(suite.workloads, SyntheticBackend(), SimulatedClock(), seed=0)
    failed = [o.plan.test_id for o in outcomes if not o.ok]
    if failed:
        raise SystemExit(f"reference run failed for {failed}")
    results = [o.result for o in outcomes]
    config = calibrate(results, base).validate()
    score = final_score(results, config).final_score
    assert score == config.scale, score
    OUT.write_text(config.dumps())
    print(f"wrote {OUT} (reference score {score})")


if __name__ == "__main__":
    main()
