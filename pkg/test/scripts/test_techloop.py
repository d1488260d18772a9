#!/usr/bin/env python3
"""
Technology loop: sampling, MLP surrogate, penalized differential evolution
and a small end-to-end tech-loop run
"""

import sys
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from app.utils.cellmodel import check_cpp, delay_factor, extend_with_fused, regression
from app.utils.errors import ConfigError, InsufficientDataError, InvalidStateError
from app.utils.evolution import DEState, enhanced_de, min_distance, penalized_fitness, select_diverse
from app.utils.interloop import CellContribution, DirectionWeights
from app.utils.library import default_library, load_library
from app.utils.macgen import generate_pe
from app.utils.mining import fusible_patterns, make_fused_definitions, mine_subcircuits, select_fusion_candidates
from app.utils.mlp import MLPSettings, MLPSurrogate, build_model, r2, train_mlp
from app.utils.space import TechParams
from app.utils.techloop import (
    REGRESSION_TOLERANCE,
    TechCandidate,
    TechGenome,
    TechLoopSettings,
    evaluate_candidate,
    latin_hypercube,
    lhs_sample,
    run_tech_loop,
)


class Sphere:
    """Quadratic bowl centred at 0.3 in every dimension"""

    def predict(self, X):
        X = np.atleast_2d(X)
        return np.sum((X - 0.3) ** 2, axis=1)


def _small_settings(**overrides):
    values = dict(n_init=10, i_max=2, s_pop=12, n_gen=5, s_top=5)
    values.update(overrides)
    return TechLoopSettings.from_dict(values, mlp={"epochs": 40})


def test_latin_hypercube_strata():
    print("🧪 Latin hypercube stratification")
    u = latin_hypercube(4, 5, seed=3)
    assert u.shape == (4, 5)
    for column in u.T:
        assert sorted(np.floor(column * 4).astype(int)) == [0, 1, 2, 3]
    np.testing.assert_array_equal(u, latin_hypercube(4, 5, seed=3))
    print("✅ Latin hypercube stratification")


def test_lhs_candidates_satisfy_cpp():
    genome = TechGenome(("FC0",))
    for c in lhs_sample(20, genome, seed=1):
        c.params.validate()
        assert check_cpp(c.params)
        assert c.rows["FC0"] in (1, 2, 3)


def test_genome_decode_snaps_discrete_genes():
    genome = TechGenome(("FC0", "FC1"))
    c = genome.decode(np.full(genome.dim, 0.5))
    assert c.params.lext_nm == 5
    assert c.rows == {"FC0": 2, "FC1": 2}
    assert check_cpp(c.params)
    snapped = genome.snap(np.full(genome.dim, 0.5))
    again = genome.decode(snapped)
    assert again.rows == c.rows and again.params.lext_nm == c.params.lext_nm
    assert again.params.to_dict() == pytest.approx(c.params.to_dict())
    assert TechCandidate.from_dict(c.to_dict()) == c


def test_penalized_fitness():
    assert penalized_fitness(1.0, 0.05) == pytest.approx(51.0)
    assert penalized_fitness(1.0, 0.1) == 1.0
    assert penalized_fitness(1.0, 0.3) == 1.0
    assert penalized_fitness(2.0, 0.0, pt=0.1, pf=0.0) == 2.0


def test_min_distance_skips_parent_copies():
    parent = np.array([0.5, 0.5])
    others = np.array([[0.5, 0.5], [0.5, 0.5], [0.9, 0.5]])
    assert min_distance(np.array([0.5, 0.6]), others, parent) == pytest.approx(np.hypot(0.4, 0.1))
    assert min_distance(np.array([0.1, 0.1]), others[:2], parent) == np.inf


def test_select_diverse_keeps_spacing():
    points = np.array([[0.0, 0.0], [0.01, 0.0], [0.5, 0.5], [0.52, 0.5], [1.0, 1.0]])
    fitness = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
    assert select_diverse(points, fitness, 5, pt=0.1) == [0, 2, 4]
    assert select_diverse(points, fitness, 2, pt=0.1) == [0, 2]


@pytest.mark.parametrize("seed", range(10))
def test_de_minimizes_sphere(seed):
    state = DEState(3, s_pop=30, n_gen=20, s_top=3, pt=0.01)
    found = enhanced_de(Sphere(), None, state, seed=seed)
    best, value = found[0]
    assert value < 1e-2
    assert value == pytest.approx(float(Sphere().predict(best)[0]))
    for i in range(len(found)):
        for j in range(i + 1, len(found)):
            assert np.linalg.norm(found[i][0] - found[j][0]) >= 0.01


def _plain_de(fn, dim, s_pop, n_gen, mf, cr, seed):
    """Textbook DE/rand/1/bin with greedy replacement, drawing random numbers in the same order"""
    rng = np.random.default_rng(seed)
    pop = rng.random((s_pop, dim))
    fit = fn(pop)
    for _ in range(n_gen):
        trials = []
        for i in range(s_pop):
            rng.random()  # elite-mix draw
            a, b, c = pop[rng.choice(np.delete(np.arange(s_pop), i), 3, replace=False)]
            mutant = np.clip(a + mf * (b - c), 0.0, 1.0)
            mask = rng.random(dim) < cr
            mask[rng.integers(dim)] = True
            trials.append(np.where(mask, mutant, pop[i]))
        trials = np.array(trials)
        f = fn(trials)
        better = f < fit
        pop[better], fit[better] = trials[better], f[better]
    return pop, fit


def test_zero_penalty_factor_reduces_to_plain_de():
    print("🧪 PF = 0 against textbook DE")
    settings = dict(s_pop=10, n_gen=8, mf=0.8, cr=0.9)
    state = DEState(2, pf=0.0, pt=0.5, elite_mix_prob=0.0, **settings)
    enhanced_de(Sphere(), None, state, seed=0)
    pop, fit = _plain_de(Sphere().predict, 2, seed=0, **settings)
    np.testing.assert_array_equal(state.population, pop)
    np.testing.assert_allclose(state.fitness, fit)

    penalized = DEState(2, pf=1e3, pt=0.5, elite_mix_prob=0.0, **settings)
    enhanced_de(Sphere(), None, penalized, seed=0)
    assert not np.array_equal(penalized.population, pop)
    print("✅ PF = 0 against textbook DE")


def test_de_is_seeded():
    a = enhanced_de(Sphere(), None, DEState(2, s_pop=10, n_gen=5), seed=2)
    b = enhanced_de(Sphere(), None, DEState(2, s_pop=10, n_gen=5), seed=2)
    for (xa, fa), (xb, fb) in zip(a, b):
        np.testing.assert_array_equal(xa, xb)
        assert fa == fb


def test_de_rejects_tiny_population():
    with pytest.raises(InvalidStateError):
        enhanced_de(Sphere(), None, DEState(2, s_pop=3), seed=0)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.random((12, 3))
    y = X @ np.array([1.0, -2.0, 0.5])
    surrogate = MLPSurrogate(build_model(3, MLPSettings(), seed=5))
    grads = surrogate.gradients(X, y)
    weights = surrogate.get_weights()
    eps = 1e-6
    for layer in (0, 2, 4):
        idx = (0,) * weights[layer].ndim
        bumped = [w.copy() for w in weights]
        bumped[layer][idx] += eps
        surrogate.set_weights(bumped)
        up = surrogate.loss(X, y)
        bumped[layer][idx] -= 2 * eps
        surrogate.set_weights(bumped)
        down = surrogate.loss(X, y)
        assert grads[layer][idx] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-8)
    surrogate.set_weights(weights)


def test_mlp_learns_cell_model_objective():
    print("🧪 MLP on the cell-model objective over the tech box")
    genome = TechGenome()
    base = default_library()
    types = sorted(base.cells)
    contrib = CellContribution({t: 1 / len(types) for t in types}, {t: 1 / len(types) for t in types})
    candidates = lhs_sample(200, genome, seed=6)
    X = np.array([genome.encode(c) for c in candidates])
    y = np.array([evaluate_candidate(c, base, contrib, DirectionWeights(0.5, 0.5))[1] for c in candidates])
    model = train_mlp(X, y, epochs=1500, seed=0)
    assert model.r2_validation > 0.95

    # training loss, averaged over blocks of 50 epochs, keeps going down
    blocks = np.asarray(model.loss_history).reshape(-1, 50).mean(axis=1)
    assert np.all(blocks[1:] <= blocks[:-1] * 1.05)
    assert blocks[-1] < 0.2 * blocks[0]
    print(f"✅ MLP on the cell-model objective (validation R2 {model.r2_validation:.4f})")



def test_mlp_fits_linear_target():
    rng = np.random.default_rng(1)
    X = rng.random((40, 3))
    y = 2.0 * X[:, 0] - X[:, 1] + 0.5
    model = train_mlp(X, y, epochs=300, seed=0)
    assert model.r2_train > 0.7
    assert np.isfinite(model.r2_validation)
    assert model.predict(X).shape == (40,)
    assert r2(y, y) == 1.0
    with pytest.raises(InsufficientDataError):
        train_mlp(X[:5], y[:5])


def test_settings_validation():
    with pytest.raises(ConfigError):
        TechLoopSettings.from_dict({"n_init": 4})
    with pytest.raises(ConfigError):
        TechLoopSettings.from_dict({"population": 4})
    with pytest.raises(ConfigError):
        TechLoopSettings.from_dict({}, mlp={"layers": 3})


@pytest.fixture(scope="module")
def fused_base():
    pe = generate_pe("WT", "SK", 2)
    definitions = make_fused_definitions(select_fusion_candidates(fusible_patterns(mine_subcircuits(pe)), 1))
    base = extend_with_fused(default_library(), definitions)
    types = sorted(base.cells)
    contrib = CellContribution({t: 1 / len(types) for t in types}, {t: 1 / len(types) for t in types})
    return base, contrib, definitions


def test_tech_loop_run(tmp_path, fused_base):
    print("🧪 small tech-loop run")
    base, contrib, definitions = fused_base
    direction = DirectionWeights(1.0, 0.0)
    settings = _small_settings()

    result = run_tech_loop(direction, contrib, base, settings=settings, seed=3, out_dir=tmp_path)
    sources = Counter(s.source.split("-")[0] for s in result.samples)
    assert sources["lhs"] == settings.n_init
    assert sources["incumbent"] == 1
    assert 0 < sources["de"] <= settings.i_max * settings.s_top
    assert result.evaluations == settings.n_init + 1 + sources["de"] == len(result.samples)
    assert len(result.r2_validation) == settings.i_max

    # the winner is the best sample that does not worsen weighted delay or power
    admissible = [s for s in result.samples if s.regression <= REGRESSION_TOLERANCE]
    assert result.best_y == min(s.y for s in admissible)
    assert result.best_y <= 1.0 + 1e-12
    assert regression(result.library, contrib, base) <= REGRESSION_TOLERANCE
    assert check_cpp(result.best.params)
    saved = load_library(tmp_path / "library.json")
    assert saved.fused.keys() == base.fused.keys()
    assert saved.get(definitions[0].name).num_rows == result.best.rows[definitions[0].name]
    table = result.table()
    assert len(table) == len(result.samples)
    assert "regression" in table.columns
    assert (tmp_path / "candidates.csv").exists()

    # a second run reuses the first run's samples as history
    again = run_tech_loop(direction, contrib, base, history=result.history(),
                          settings=_small_settings(i_max=0), seed=4)
    assert again.best_y <= result.best_y
    assert again.evaluations == settings.n_init + 1
    print(f"✅ small tech-loop run (best y {result.best_y:.4f})")


def test_delay_direction_speeds_up_the_process(fused_base):
    base, contrib, _ = fused_base
    settings = _small_settings(regression_penalty=0.0)
    result = run_tech_loop(DirectionWeights(1.0, 0.0), contrib, base, settings=settings, seed=5)
    assert all(s.source != "incumbent" for s in result.samples)
    assert result.evaluations == len(result.samples)
    assert result.best_y == min(s.y for s in result.samples)
    assert result.best_y < 1.0
    assert delay_factor(TechParams()) == pytest.approx(1.0)
    assert delay_factor(result.best.params) < 1.0


def test_regression_penalty_validated():
    with pytest.raises(ConfigError):
        TechLoopSettings.from_dict({"regression_penalty": -1.0})
    assert not TechLoopSettings.from_dict({"regression_penalty": 0.0}).guarded
    assert TechLoopSettings().guarded



if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
