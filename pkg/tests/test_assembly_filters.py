import numpy as np
import pytest

from rdbn import WorldState
from rdbn.assembly import AssemblyConfig, simulate_assembly
from rdbn.filters import (AssemblyMultiPF, CheckpointError, ParticleSet, load_filter,
                          load_particles, make_filter, save_filter, save_particles,
                          variable_count)
from rdbn.filters.assembly import FILTERS

CFG = AssemblyConfig(n_plates=3, n_brackets=2, n_bolts=3, n_values=2, fault_probability=0.1,
                     plan_length=12, seed=4)


@pytest.fixture(scope="module")
def traj():
    return simulate_assembly(CFG)


def run(filt, traj, steps=None):
    filt.reset(traj.states[0])
    for a, o in list(zip(traj.actions, traj.observations))[:steps]:
        filt.step(a, o)
    return filt


def build(method, traj, n=40, seed=0, **kw):
    return make_filter(method, traj.domain, n, CFG.fault_probability, CFG.p_o,
                       np.random.default_rng(seed), **kw)


@pytest.mark.parametrize("method", sorted(FILTERS))
def test_queries_are_probabilities(method, traj):
    f = run(build(method, traj), traj)
    p = f.relation_probs()
    assert p.shape == (2, traj.domain.n, traj.domain.n)
    assert np.all((p >= -1e-12) & (p <= 1 + 1e-12))
    lm = f.log_marginals(traj.states[-1])
    assert lm.shape == (variable_count(traj.domain),)
    assert np.all(lm <= 1e-12)
    assert f.log_joint(traj.states[-1]) <= 1e-12


def test_dense_and_sparse_blocks_agree(traj):
    dense = run(build("rbpf", traj, seed=3), traj)
    sparse = run(build("rbpf_sets", traj, seed=3, prune=0.0), traj)
    assert np.array_equal(dense.attrs, sparse.attrs)
    assert np.allclose(dense.relation_probs(), sparse.relation_probs(), atol=1e-9)


def test_rbpf_rejects_bad_setups(traj):
    with pytest.raises(ValueError):
        build("rbpf", traj, kappa=2)
    with pytest.raises(ValueError):
        build("rbpf_sets", traj, relational_similarity=True)
    with pytest.raises(ValueError, match="unknown method"):
        build("kalman", traj)
    with pytest.raises(ValueError):
        build("pf", traj, n=0)


def test_rbpf_agrees_with_large_pf(traj):
    # both target the same filtering distribution
    rb = run(build("rbpf", traj, n=300, seed=1), traj)
    pf = run(build("pf", traj, n=20_000, seed=2), traj)
    assert np.abs(rb.relation_probs() - pf.relation_probs()).max() < 0.05


@pytest.mark.parametrize("method", ["pf", "spf", "aspf"])
def test_shared_population_matches_individual_marginals(method, traj):
    multi = run(AssemblyMultiPF(traj.domain, 40, CFG.fault_probability, CFG.p_o,
                                np.random.default_rng(9)), traj)
    alone = run(build(method, traj, seed=9), traj)
    truth = traj.states[-1]
    assert np.allclose(multi.log_marginals_for(method, truth), alone.log_marginals(truth))


@pytest.mark.parametrize("method,single", [("pf", "pf"), ("joint_independent", "aspf"),
                                           ("rkde", "rkde")])
def test_shared_population_matches_individual_joints(method, single, traj):
    multi = run(AssemblyMultiPF(traj.domain, 40, CFG.fault_probability, CFG.p_o,
                                np.random.default_rng(9)), traj)
    alone = run(build(single, traj, seed=9), traj)
    truth = traj.states[-1]
    assert multi.log_joint_for(method, truth) == pytest.approx(alone.log_joint(truth))


@pytest.mark.parametrize("method", sorted(FILTERS))
def test_checkpoint_resumes_identically(method, traj, tmp_path):
    straight = run(build(method, traj, seed=5), traj)
    half = run(build(method, traj, seed=5), traj, steps=6)
    path = tmp_path / "f.npz"
    save_filter(half, path)
    resumed = load_filter(path, traj.domain)
    assert type(resumed) is type(half)
    for a, o in list(zip(traj.actions, traj.observations))[6:]:
        resumed.step(a, o)
    assert np.array_equal(straight.attrs, resumed.attrs)
    assert np.allclose(straight.relation_probs(), resumed.relation_probs(), atol=1e-15)
    truth = traj.states[-1]
    assert straight.log_joint(truth) == pytest.approx(resumed.log_joint(truth), abs=1e-12)


def test_checkpoint_version_checked(traj, tmp_path):
    f = run(build("pf", traj), traj, steps=2)
    path = tmp_path / "f.npz"
    save_filter(f, path)
    with np.load(path) as z:
        data = {k: z[k] for k in z.files}
    data["meta"] = np.array(str(data["meta"]).replace('"version": 1', '"version": 99'))
    np.savez(path, **data)
    with pytest.raises(CheckpointError, match="version 99"):
        load_filter(path, traj.domain)


def test_particle_set_round_trip(tiny_model, tmp_path):
    v = tiny_model.vocabulary
    ps = ParticleSet([WorldState(v, 2, [("Hot", ("P1",)), ("AttachedTo", ("P2", "N3"))]),
                      WorldState(v, 2, [])], np.array([7, 3]), [(1, "uniform reweighting")])
    path = tmp_path / "p.txt"
    save_particles(ps, path)
    back = load_particles(path, v)
    assert back.states == ps.states
    assert back.counts.tolist() == [7, 3]
    assert back.events == [(1, "uniform reweighting")]
    path.write_text("garbage\n")
    with pytest.raises(CheckpointError):
        load_particles(path, v)
