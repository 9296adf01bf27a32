"""Smoke test for the vai extension module.

Build first with `cargo build -p vai-py --release`. If `vai` is not
installed, the freshly built library is loaded from target/.
"""

import importlib
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_vai():
    try:
        return importlib.import_module("vai")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libvai.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "vai.so")
            sys.path.insert(0, str(tmp))
            return importlib.import_module("vai")
    raise SystemExit("vai extension not found; run `cargo build -p vai-py --release`")


def main():
    vai = load_vai()

    assert vai.lp_norm([3.0, -4.0], 2.0) == 5.0
    assert vai.dual_order(math.inf) == 1.0
    assert abs(vai.budget_weight(0.5, 0.5) - 1.25) < 1e-12

    mixed = vai.mix_policies([1.0, 0.0], [0.5, 0.5], 0.2)
    assert abs(sum(mixed) - 1.0) < 1e-12
    assert vai.check_deviation_bound(mixed, [0.5, 0.5], 0.2, 1.0)
    assert abs(vai.hoeffding_bound(100, 0.1) - 2 * math.exp(-2)) < 1e-12

    closed, brute = vai.worst_case_gap([1.0, -2.0, 0.5], 0.3, 0.4)
    assert abs(closed - brute) <= 0.02 * closed + 1e-6

    assert abs(vai.pearson([1, 2, 3], [2, 4, 6]) - 1.0) < 1e-12
    try:
        vai.pearson([1, 2, 3], [1, 1, 1])
    except RuntimeError:
        pass
    else:
        raise AssertionError("zero variance should raise")

    env = vai.Env("vicsek", 8, horizon=5, seed=3)
    assert len(env.states) == 8 and abs(sum(env.mu) - 1.0) < 1e-12
    reward, states = env.step([0] * env.n_agents)
    assert 0.0 <= reward <= 1.0 + 1e-12 and len(states) == 8
    try:
        env.step([99] * 8)
    except ValueError:
        pass
    else:
        raise AssertionError("bad action should raise")

    v = vai.ValueModel.constant([1.0] * env.n_states)
    ids, rewards = vai.select_greedy(v, env, 2, 1.0)
    assert len(ids) == 2 and all(abs(r) < 1e-12 for r in rewards)
    assert sorted(vai.select_random(8, 3, 7)) == sorted(set(vai.select_random(8, 3, 7)))

    with tempfile.TemporaryDirectory() as out:
        ledger = vai.run_pipeline(str(ROOT / "configs" / "smoke.toml"), out)
        assert Path(ledger).exists()
        vm = vai.ValueModel.load(str(Path(out) / "value.ckpt"))
        assert vm.n_states == env.n_states

    print("smoke test passed")


if __name__ == "__main__":
    main()
