import numpy as np
import pytest

import shiftclass.selection as selection_mod
from shiftclass.data import extract_patches
from shiftclass.errors import SelectionError
from shiftclass.seeding import derive_seed
from shiftclass.selection import (
    CandidateResult,
    GridSpec,
    bits_filter,
    build_grid,
    gamma_filter,
    grid_csv,
    run_selection,
    select,
    sparsest_select,
)
from shiftclass.training import TrainConfig

QUICK_CFG = TrainConfig(atoms=20, epochs=40, lr=0.01, batch_size=64, v=1e-3)


def candidate(kappa=0.0, t=0.5, q=3, acc=0.9, bits=20, sparsity=0.5, status="ok"):
    return CandidateResult(kappa, t, q, acc, bits, sparsity, None, status=status)


@pytest.fixture(scope="module")
def texture_split(texture_setup):
    regions = texture_setup["train_regions"]
    samples = []
    for label, region in enumerate(regions):
        samples.extend(
            extract_patches(
                region, 12, 120,
                derive_seed(99, f"sel:{label}"), label=label,
            )
        )
    return samples


class TestGammaFilter:
    def test_keeps_within_relative_slack(self):
        results = [
            candidate(acc=0.97),
            candidate(acc=0.9691),
            candidate(acc=0.9690),
            candidate(acc=0.5),
        ]
        kept = gamma_filter(results, 0.001)
        assert [r.accuracy for r in kept] == [0.97, 0.9691]

    def test_tiny_gamma_keeps_unique_maximum(self):
        results = [candidate(acc=0.9), candidate(acc=0.8)]
        kept = gamma_filter(results, 1e-12)
        assert [r.accuracy for r in kept] == [0.9]

    def test_gamma_one_keeps_everything(self):
        results = [candidate(acc=0.9), candidate(acc=0.0)]
        assert len(gamma_filter(results, 1.0)) == 2

    def test_failed_candidates_are_ignored(self):
        results = [candidate(acc=0.9), candidate(acc=None, status="failed")]
        assert len(gamma_filter(results, 0.5)) == 1

    def test_all_failed_raises(self):
        with pytest.raises(SelectionError):
            gamma_filter([candidate(acc=None, status="failed")], 0.1)


class TestBitsFilter:
    def test_keeps_minimum(self):
        results = [candidate(bits=22), candidate(bits=22), candidate(bits=30)]
        assert [r.bits for r in bits_filter(results)] == [22, 22]

    def test_all_equal_is_identity(self):
        results = [candidate(bits=9)] * 3
        assert len(bits_filter(results)) == 3

    def test_singleton(self):
        results = [candidate(bits=11)]
        assert bits_filter(results) == results


class TestSparsestSelect:
    def test_max_sparsity_wins(self):
        a, b = candidate(sparsity=0.8), candidate(sparsity=0.9)
        assert sparsest_select([a, b]) is b

    def test_tie_breaks_prefer_larger_threshold(self):
        a = candidate(sparsity=0.8, t=0.25)
        b = candidate(sparsity=0.8, t=0.5)
        assert sparsest_select([a, b]) is b

    def test_then_smaller_quanta(self):
        a = candidate(sparsity=0.8, t=0.5, q=5)
        b = candidate(sparsity=0.8, t=0.5, q=3)
        assert sparsest_select([a, b]) is b

    def test_then_smaller_kappa(self):
        a = candidate(sparsity=0.8, t=0.5, q=3, kappa=0.02)
        b = candidate(sparsity=0.8, t=0.5, q=3, kappa=0.01)
        assert sparsest_select([a, b]) is b


class TestGridSpec:
    def test_defaults_match_protocol(self):
        grid = GridSpec()
        assert grid.kappas == (0.004, 0.008, 0.010, 0.012, 0.014, 0.016, 0.018, 0.020)
        assert grid.quanta == (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 31, 127)
        assert grid.gamma == 0.001

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(gamma=0.0)
        with pytest.raises(ValueError):
            GridSpec(quanta=(0,))
        with pytest.raises(ValueError):
            GridSpec(kappas=(-0.1,))


class TestBuildGrid:
    def test_grid_arithmetic_and_training_reuse(self, texture_split, monkeypatch):
        calls = []
        real_train = selection_mod.train_for_samples

        def counting_train(samples, cfg):
            calls.append(cfg.kappa)
            return real_train(samples, cfg)

        monkeypatch.setattr(selection_mod, "train_for_samples", counting_train)
        grid = GridSpec(kappas=(0.0, 0.01), quanta=(2, 5), max_thresholds=3)
        from shiftclass.data import split_80_20

        split = split_80_20(texture_split, seed=5)
        results = build_grid(split.train, split.holdout, grid, QUICK_CFG, 7)
        assert len(calls) == 2  # one training per kappa, reused across tuples
        assert len(results) == 2 * 3 * 2
        assert all(not r.failed for r in results)
        kappas = sorted(set(r.kappa for r in results))
        assert kappas == [0.0, 0.01]

    def test_bad_quanta_marks_candidates_failed(self, texture_split):
        grid = GridSpec(kappas=(0.0,), quanta=(2, 300), max_thresholds=2)
        from shiftclass.data import split_80_20

        split = split_80_20(texture_split, seed=5)
        results = build_grid(split.train, split.holdout, grid, QUICK_CFG, 7)
        failed = [r for r in results if r.failed]
        assert len(failed) == 2  # quanta=300 > pixel_max for both thresholds
        assert all(r.quanta == 300 for r in failed)
        assert all("quanta" in (r.error or "") for r in failed)

    def test_jobs_parallel_matches_sequential(self, texture_split):
        grid = GridSpec(kappas=(0.0,), quanta=(2, 5), max_thresholds=2)
        from shiftclass.data import split_80_20

        split = split_80_20(texture_split, seed=5)
        seq = build_grid(split.train, split.holdout, grid, QUICK_CFG, 7, jobs=1)
        par = build_grid(split.train, split.holdout, grid, QUICK_CFG, 7, jobs=4)
        for a, b in zip(seq, par):
            assert (a.kappa, a.z_threshold, a.quanta, a.accuracy, a.bits,
                    a.sparsity) == (b.kappa, b.z_threshold, b.quanta, b.accuracy,
                                    b.bits, b.sparsity)


class TestSelectCascade:
    def test_containment_and_contracts(self, texture_split):
        grid = GridSpec(kappas=(0.0, 0.01), quanta=(2, 4, 127), max_thresholds=3)
        outcome, results, split = run_selection(texture_split, grid, QUICK_CFG, 3)
        audit = outcome.audit
        assert (
            audit["candidates"] >= audit["ok"] >= audit["gamma"]
            >= audit["bits"] >= audit["chosen"] == 1
        )
        chosen = outcome.chosen
        assert chosen.accuracy >= (1 - grid.gamma) * outcome.best_acc
        gamma_set = gamma_filter(results, grid.gamma)
        assert chosen.bits == min(r.bits for r in gamma_set)
        bits_set = bits_filter(gamma_set)
        assert chosen.sparsity == max(r.sparsity for r in bits_set)

    def test_rerun_reproduces_choice(self, texture_split):
        grid = GridSpec(kappas=(0.0,), quanta=(2, 5), max_thresholds=2)
        a, _, _ = run_selection(texture_split, grid, QUICK_CFG, 11)
        b, _, _ = run_selection(texture_split, grid, QUICK_CFG, 11)
        assert (a.chosen.kappa, a.chosen.z_threshold, a.chosen.quanta) == (
            b.chosen.kappa, b.chosen.z_threshold, b.chosen.quanta
        )
        assert a.chosen.model == b.chosen.model
        assert a.audit == b.audit

    def test_select_empty_raises(self):
        with pytest.raises(SelectionError):
            select([candidate(acc=None, status="failed")], 0.1)

    def test_grid_csv_columns(self):
        text = grid_csv([candidate(), candidate(acc=None, bits=None,
                                                sparsity=None, status="failed")])
        lines = text.splitlines()
        assert lines[0] == "kappa,z_threshold,quanta,accuracy,bits,sparsity,status"
        assert len(lines) == 3
        assert lines[2].endswith("failed")
