import json
import math

import numpy as np
import pytest

from mixlogit.errors import ConfigError, IntegrityError, NonPositiveDefinite, SamplerError, SpecMismatch
from mixlogit.sampler import (DrawLayout, HyperPriors, MCMCConfig, MixingSpec, ModelPriors, PosteriorDraws,
                              default_priors, run_chain, run_estimation)
from mixlogit.sampler import chain as chain_module
from mixlogit.synthgen import ScenarioSpec, WtpLaw, generate_dataset, generate_tastes, generate_wtp_dataset
from mixlogit.utility import UtilitySpec

LIN = UtilitySpec.linear([0, 1])


@pytest.fixture(scope="module")
def small():
    spec = ScenarioSpec("multimodal", N=25, T=3, seed=1)
    return generate_dataset(spec, generate_tastes(spec))


def cfg(**kw):
    base = dict(n_chains=1, n_iterations=60, n_burnin=20, thinning=3, seed=5)
    base.update(kw)
    return MCMCConfig(**base)


MIXINGS = [MixingSpec("mvn"), MixingSpec("fmon", K=2), MixingSpec("dpmon", K=8)]


@pytest.mark.parametrize("mixing", MIXINGS, ids=lambda m: m.kind)
def test_retained_count_and_layout(small, mixing):
    c = cfg()
    d = run_chain(small, LIN, mixing, default_priors(mixing, 2), c, 0)
    assert d.n_draws == (60 - 20) // 3
    assert d.matrix.shape == (13, d.layout.n_columns)
    assert d.theta().shape == (13, 25, 2)
    assert d.pi().shape == (13, mixing.K)
    assert np.all(np.isfinite(d.matrix))
    assert all(math.fsum(row) == 1.0 for row in d.pi())
    assert np.all(np.linalg.eigvalsh(d.omega()) > 0)


@pytest.mark.parametrize("mixing", MIXINGS, ids=lambda m: m.kind)
def test_same_seed_identical(small, mixing):
    pri = default_priors(mixing, 2)
    a = run_chain(small, LIN, mixing, pri, cfg(), 7)
    b = run_chain(small, LIN, mixing, pri, cfg(), 7)
    c = run_chain(small, LIN, mixing, pri, cfg(), 8)
    assert np.array_equal(a.matrix, b.matrix)
    assert not np.array_equal(a.matrix, c.matrix)


def test_estimation_merges_chains_and_parallel_matches_serial(small):
    mix = MixingSpec("fmon", K=2)
    c = cfg(n_chains=3)
    serial = run_estimation(small, LIN, mix, default_priors(mix, 2), c)
    parallel = run_estimation(small, LIN, mix, default_priors(mix, 2), c, jobs=2)
    assert serial.n_draws == 3 * 13
    assert serial.chain_labels.tolist() == [0] * 13 + [1] * 13 + [2] * 13
    assert len(serial.meta["final_rho"]) == 3
    assert np.array_equal(serial.matrix, parallel.matrix)
    assert not np.array_equal(serial.chains[0], serial.chains[1])


def test_wtp_chain_runs():
    ds, _ = generate_wtp_dataset(30, 3, WtpLaw(), seed=2)
    spec = UtilitySpec.wtp(0, 1, [2, 3, 4])
    for mix in (MixingSpec("mvn"), MixingSpec("dpmon", K=5)):
        d = run_chain(ds, spec, mix, default_priors(mix, 3, 2), cfg(), 0)
        assert d.normal_zeta().shape == (13, 2) and d.normal_omega().shape == (13, 2)
        assert d.theta().shape == (13, 30, 5)
        assert np.all(d.normal_omega() > 0)


def test_loglik_column_matches_theta(small):
    from mixlogit.utility import PanelLikelihood
    d = run_chain(small, LIN, MixingSpec("mvn"), None, cfg(), 0)
    lik = PanelLikelihood(LIN, small.arrays)
    for s in (0, 6, 12):
        assert d.loglik()[s] == pytest.approx(lik.person_log_lik(d.theta()[s]).sum(), abs=1e-9)


def test_adaptation_moves_rho(small):
    d = run_chain(small, LIN, MixingSpec("mvn"), None, cfg(n_iterations=200, n_burnin=100), 0)
    rho = d.meta["final_rho"][0]
    assert rho != 0.1 and abs(rho - 0.1) <= 200 * 0.001 + 1e-12
    frozen = run_chain(small, LIN, MixingSpec("mvn"), None,
                       cfg(n_iterations=200, n_burnin=100, freeze_after_burnin=True), 0)
    assert abs(frozen.meta["final_rho"][0] - 0.1) <= 100 * 0.001 + 1e-12


def test_compiled_backend_matches_numpy(small):
    pri = ModelPriors(HyperPriors(np.zeros(2), 10 * np.eye(2), 2.0, np.full(2, 5.0)))
    kw = dict(n_iterations=40, n_burnin=0, thinning=1)
    a = run_chain(small, LIN, MixingSpec("mvn"), pri, cfg(**kw), 3)
    b = run_chain(small, LIN, MixingSpec("mvn"), pri, cfg(backend="numba", **kw), 3)
    assert a.matrix.shape == b.matrix.shape
    assert np.allclose(a.matrix, b.matrix, rtol=1e-8, atol=1e-10)
    assert a.meta["final_rho"] == pytest.approx(b.meta["final_rho"])


def test_compiled_backend_prior_only_matches_numpy():
    pri = ModelPriors(HyperPriors(np.zeros(2), np.eye(2), 2.0, np.ones(2)))
    kw = dict(n_iterations=30, n_burnin=0, thinning=1, disable_likelihood=True)
    a = run_chain(None, LIN, MixingSpec("mvn"), pri, cfg(**kw), 4, n_persons=3)
    b = run_chain(None, LIN, MixingSpec("mvn"), pri, cfg(backend="numba", **kw), 4, n_persons=3)
    assert np.allclose(a.matrix, b.matrix, rtol=1e-8, atol=1e-10)


def test_compiled_backend_rejects_mixtures(small):
    with pytest.raises(ConfigError):
        run_chain(small, LIN, MixingSpec("fmon"), None, cfg(backend="numba"), 0)


def test_prior_only_needs_person_count():
    with pytest.raises(Exception, match="n_persons"):
        run_chain(None, LIN, MixingSpec("mvn"), None, cfg(disable_likelihood=True), 0)


def test_sampler_error_reports_iteration(small, monkeypatch):
    real = chain_module.update_omega
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 5:
            raise NonPositiveDefinite("Omega: pivot below tolerance")
        return real(*args, **kwargs)

    monkeypatch.setattr(chain_module, "update_omega", flaky)
    with pytest.raises(SamplerError) as info:
        run_chain(small, LIN, MixingSpec("mvn"), None, cfg(), 0, chain=1)
    assert info.value.iteration == 4 and info.value.chain == 1
    assert "chain 1, iteration 4" in str(info.value)


@pytest.mark.parametrize("kw", [dict(n_burnin=60), dict(thinning=0), dict(n_chains=0), dict(backend="gpu"),
                                dict(rho0=0.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        cfg(**kw)


def test_mixing_spec_validation():
    assert MixingSpec("dp").kind == "dpmon" and MixingSpec("dpmon").K == 100
    assert MixingSpec("2-F-MON").K == 2
    for bad in (dict(kind="mvn", K=2), dict(kind="fmon", K=1), dict(kind="nope"), dict(kind="dpmon", fixed_alpha=0)):
        with pytest.raises(ConfigError):
            MixingSpec(**bad)


# --- persistence


def test_save_load_round_trip(small, tmp_path):
    mix = MixingSpec("dpmon", K=6)
    d = run_estimation(small, LIN, mix, default_priors(mix, 2), cfg(n_chains=2))
    d.save(tmp_path / "fit")
    back = PosteriorDraws.load(tmp_path / "fit")
    assert np.array_equal(back.matrix, d.matrix)
    assert back.layout == d.layout
    assert (tmp_path / "fit" / "columns.txt").read_text().split() == d.layout.columns()
    meta = json.loads((tmp_path / "fit" / "meta.json").read_text())
    assert meta["retained"] == [13, 13] and meta["mixing"]["kind"] == "dpmon"
    back.check_mixing(mix)
    with pytest.raises(SpecMismatch):
        back.check_mixing(MixingSpec("fmon", K=6))


def test_save_replaces_atomically(small, tmp_path):
    d = run_chain(small, LIN, MixingSpec("mvn"), None, cfg(), 0)
    e = run_chain(small, LIN, MixingSpec("mvn"), None, cfg(), 1)
    d.save(tmp_path / "fit")
    e.save(tmp_path / "fit")
    assert np.array_equal(PosteriorDraws.load(tmp_path / "fit").matrix, e.matrix)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["fit"]


def test_load_detects_corruption(small, tmp_path):
    d = run_chain(small, LIN, MixingSpec("mvn"), None, cfg(), 0)
    d.save(tmp_path / "fit")
    f = tmp_path / "fit" / "chain_1.f64"
    raw = bytearray(f.read_bytes())
    raw[10] ^= 0xFF
    f.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        PosteriorDraws.load(tmp_path / "fit")


def test_layout_columns_unique():
    layout = DrawLayout(K=3, R=2, Rn=2, N=4, D=4, has_alpha=True)
    cols = layout.columns()
    assert len(cols) == len(set(cols)) == layout.n_columns


def test_default_priors_unit_scale_base_measure():
    dp = default_priors(MixingSpec("dpmon", K=5), 2, 1)
    assert np.array_equal(dp.mixing.Sigma0, np.eye(2)) and np.array_equal(dp.mixing.A, [1.0, 1.0])
    fm = default_priors(MixingSpec("fmon", K=2), 2)
    assert np.array_equal(fm.mixing.Sigma0, 100 * np.eye(2)) and np.array_equal(fm.mixing.A, [1000.0, 1000.0])
    assert np.array_equal(dp.normal.A, [1000.0]) and fm.normal is None
