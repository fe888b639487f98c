import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from blpinn import autodiff as ad
from blpinn import network, oracle, physics, pigan
from blpinn.errors import ConfigError, TrainingDiverged

PROF = oracle.riemann_solve(oracle.make_flux("corey"), 1.0, 0.0)


def tiny_cfg(**kw):
    base = dict(epochs=20, log_every=5, generator_widths=(6, 6), discriminator_widths=(5,),
                posterior_widths=(5,), seed=3)
    base.update(kw)
    return pigan.GanConfig(**base)


def tiny_samples(seed=0):
    return oracle.sample_training_data(PROF, "boundary_only", 40, seed=seed, n_collocation=200)


def gen_net(seed=0, latent=1):
    return network.init_xavier(network.NetSpec(2 + latent, (6, 6, 1), "tanh", seed))


# --- generator ----------------------------------------------------------------

def test_generate_is_deterministic_and_matches_batch():
    gen = gen_net()
    vals = []
    for _ in range(2):
        tape = ad.ScalarTape()
        vals.append(pigan.generate(gen, tape.var(0.3), tape.var(0.4), [tape.var(-0.7)]).value)
    assert vals[0] == vals[1]
    batch = pigan.generate_batch(gen.torch_layers(), torch.tensor([[0.3]]), torch.tensor([[0.4]]),
                                 torch.tensor([[-0.7]]))
    assert abs(batch.item() - vals[0]) < 1e-14


def test_generate_checks_latent_size():
    tape = ad.ScalarTape()
    with pytest.raises(ValueError):
        pigan.generate(gen_net(), tape.var(0.1), tape.var(0.1), [tape.var(0.0), tape.var(1.0)])


def test_generate_is_differentiable_in_x():
    gen = gen_net(2)
    tape = ad.ScalarTape()
    x = tape.var(0.5)
    s = pigan.generate(gen, x, tape.var(0.2), [tape.var(0.1)])
    (g,) = ad.gradient(s, [x])
    h = 1e-6
    pts = np.array([[0.5 + h, 0.2], [0.5 - h, 0.2]])
    fd = pigan.evaluate_members(gen, pts[:, 0], pts[:, 1], np.array([[0.1]]))[0]
    assert g == pytest.approx((fd[0] - fd[1]) / (2 * h), rel=1e-6)


def test_latent_spread_is_nondegenerate():
    gen = gen_net(1)
    zs = np.random.default_rng(0).standard_normal((1000, 1))
    out = pigan.evaluate_members(gen, [0.4], [0.6], zs)
    assert out.var() > 1e-6


def test_zeroed_latent_pathway_removes_dependence():
    gen = gen_net(1)
    gen.weights[0][:, 2:] = 0.0
    zs = np.random.default_rng(0).standard_normal((50, 1))
    out = pigan.evaluate_members(gen, [0.4, 0.8], [0.6, 0.1], zs)
    assert np.all(out == out[0])


# --- losses ---------------------------------------------------------------------

def test_discriminator_loss_at_zero_logits():
    z = torch.zeros(5, 1)
    assert pigan.discriminator_loss(z, z).item() == pytest.approx(2 * math.log(2), abs=1e-15)


def test_discriminator_loss_perfect_discrimination():
    loss = pigan.discriminator_loss(torch.full((3, 1), -1e4), torch.full((3, 1), 1e4))
    assert loss.item() == 0.0
    swapped = pigan.discriminator_loss(torch.full((3, 1), 1e4), torch.full((3, 1), -1e4), swap_labels=True)
    assert swapped.item() == 0.0


def test_discriminator_loss_hand_value():
    loss = pigan.discriminator_loss(torch.tensor([[1.0]]), torch.tensor([[-1.0]]))
    assert loss.item() == pytest.approx(2 * 1.3132616875182228, abs=1e-14)


def test_discriminator_loss_does_not_overflow():
    loss = pigan.discriminator_loss(torch.tensor([[800.0]]), torch.tensor([[-800.0]]))
    assert loss.item() == pytest.approx(1600.0)


def test_generator_loss_examples():
    cfg = pigan.GanConfig(w_pde=0.0, lambda_entropy=1.0)
    total, entropy, post, pde = pigan.generator_loss(torch.tensor([[2.0], [-2.0]]),
                                                     torch.tensor([5.0, 7.0]), torch.ones(4, 1), cfg)
    assert total.item() == 0.0
    assert post.item() == 0.0
    assert pde.item() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(0, 1), st.floats(0, 3))
def test_generator_loss_decomposition(logits, lam, w):
    cfg = pigan.GanConfig(w_pde=w, lambda_entropy=lam)
    d = torch.tensor(logits).reshape(-1, 1)
    nll = torch.linspace(0.5, 2.0, len(logits))
    r = torch.linspace(-1.0, 1.0, 7).reshape(-1, 1)
    total, entropy, post, pde = pigan.generator_loss(d, nll, r, cfg)
    assert entropy.item() == d.mean().item()
    assert post.item() == pytest.approx((1 - lam) * nll.mean().item(), abs=1e-12)
    assert pde.item() == pytest.approx(w * (r ** 2).mean().item(), abs=1e-12)
    assert total.item() == pytest.approx(entropy.item() + post.item() + pde.item(), abs=1e-12)


def test_zero_residuals_give_zero_pde_term():
    _, _, _, pde = pigan.generator_loss(torch.zeros(2, 1), torch.zeros(2), torch.zeros(9, 1),
                                        pigan.GanConfig())
    assert pde.item() == 0.0


def test_data_misfit_enters_physics_term():
    cfg = pigan.GanConfig(w_pde=2.0, w_data=0.5)
    _, _, _, pde = pigan.generator_loss(torch.zeros(2, 1), torch.zeros(2), torch.zeros(3, 1), cfg,
                                        data_misfit=torch.tensor([[0.2], [0.4]]))
    assert pde.item() == pytest.approx(2.0 * 0.5 * 0.3)


def test_logits_posterior_form():
    cfg = pigan.GanConfig(posterior_form="logits", lambda_entropy=0.0)
    logits = torch.tensor([[0.0]])
    _, _, post, _ = pigan.generator_loss(torch.zeros(1, 1), logits, torch.zeros(1, 1), cfg)
    assert post.item() == pytest.approx(-math.log(2))


def test_posterior_nll():
    z = torch.tensor([[0.5, -1.0]])
    nll = pigan.posterior_nll(z, torch.zeros(1, 2))
    assert nll.item() == pytest.approx(0.5 * 1.25 + math.log(2 * math.pi))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_density_ratio_identity(p, q):
    # a perfect classifier has sigma(D) = p / (p + q), i.e. D = log p - log q
    logit = math.log(p) - math.log(q)
    sig = 1 / (1 + math.exp(-logit))
    assert sig == pytest.approx(p / (p + q), rel=1e-12)
    assert pigan.density_ratio(logit) == pytest.approx(p / q, rel=1e-12)
    if 1e-2 < sig < 1 - 1e-2:
        assert pigan.density_ratio(logit) == pytest.approx(sig / (1 - sig), rel=1e-12)


@pytest.mark.parametrize("kwargs", [dict(w_pde=-1.0), dict(lambda_entropy=1.5), dict(epochs=0),
                                    dict(latent_dim=0), dict(posterior_form="mmd"), dict(d_steps=0),
                                    dict(lr_final_factor=0.0), dict(lr_final_factor=2.0)])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        pigan.GanConfig(**kwargs)


def test_beta_aliases_physics_weight():
    assert pigan.GanConfig(w_pde=3.0).beta == 3.0


# --- training ------------------------------------------------------------------

def test_history_is_seed_deterministic():
    s = tiny_samples()
    a = pigan.train_gan(s, physics.PdeParams(epsilon=1e-3), tiny_cfg())
    b = pigan.train_gan(s, physics.PdeParams(epsilon=1e-3), tiny_cfg())
    assert a.history == b.history
    assert np.array_equal(network.flatten_params(a.generator), network.flatten_params(b.generator))


def test_history_decomposes():
    res = pigan.train_gan(tiny_samples(), physics.PdeParams(), tiny_cfg())
    for row in res.history:
        assert row["loss_g"] == pytest.approx(row["entropy"] + row["posterior"] + row["pde"], abs=1e-12)
    assert res.stopped_at == 20


def test_gradient_isolation():
    s = tiny_samples()
    init = [network.init_xavier(spec) for spec in tiny_cfg().specs()]
    only_d = pigan.train_gan(s, physics.PdeParams(), tiny_cfg(lr_generator=0.0, lr_posterior=0.0))
    assert np.array_equal(network.flatten_params(only_d.generator), network.flatten_params(init[0]))
    assert np.array_equal(network.flatten_params(only_d.posterior), network.flatten_params(init[2]))
    assert not np.array_equal(network.flatten_params(only_d.discriminator), network.flatten_params(init[1]))
    only_g = pigan.train_gan(s, physics.PdeParams(), tiny_cfg(lr_discriminator=0.0))
    assert np.array_equal(network.flatten_params(only_g.discriminator), network.flatten_params(init[1]))
    assert not np.array_equal(network.flatten_params(only_g.generator), network.flatten_params(init[0]))


def test_learnable_pde_parameter_moves_with_generator():
    pde = physics.PdeParams(m=3.0, learnable={"m"})
    res = pigan.train_gan(tiny_samples(), pde, tiny_cfg())
    assert res.params.m != 3.0


def test_early_stop_and_callback():
    res = pigan.train_gan(tiny_samples(), physics.PdeParams(), tiny_cfg(early_stop_epochs=7))
    assert res.stopped_at == 7
    res = pigan.train_gan(tiny_samples(), physics.PdeParams(), tiny_cfg(), callback=lambda ep, st: ep == 4)
    assert res.stopped_at == 4 and res.history[-1]["epoch"] == 4


def test_step_size_decay():
    s, pde = tiny_samples(), physics.PdeParams()
    flat = network.flatten_params
    plain = pigan.train_gan(s, pde, tiny_cfg())
    unit = pigan.train_gan(s, pde, tiny_cfg(lr_final_factor=1.0))
    assert np.array_equal(flat(plain.generator), flat(unit.generator))
    decayed = pigan.train_gan(s, pde, tiny_cfg(lr_final_factor=1e-3))
    init = flat(network.init_xavier(tiny_cfg().specs()[0]))
    assert 0 < np.linalg.norm(flat(decayed.generator) - init) < np.linalg.norm(flat(plain.generator) - init)


def test_collocation_minibatch_and_resampling_run():
    res = pigan.train_gan(tiny_samples(), physics.PdeParams(),
                          tiny_cfg(collocation_batch=32, resample_collocation=True))
    assert all(math.isfinite(r["loss_g"]) for r in res.history)


def test_requires_collocation_and_labels():
    s = tiny_samples()
    with pytest.raises(ConfigError):
        pigan.train_gan(oracle.SampleSet(initial=s.initial, boundary=s.boundary), physics.PdeParams(), tiny_cfg())
    with pytest.raises(ConfigError):
        pigan.train_gan(oracle.SampleSet(collocation=s.collocation), physics.PdeParams(), tiny_cfg())


def test_divergence_raises():
    s = tiny_samples()
    s.initial[0, 1] = np.nan
    with pytest.raises(TrainingDiverged):
        pigan.train_gan(s, physics.PdeParams(), tiny_cfg())


# --- ensembles ------------------------------------------------------------------

def linear_in_z(a=0.3):
    spec = network.NetSpec(3, (1,))
    return network.DenseNet(spec, [np.array([[0.2, -0.1, a]])], [np.array([0.5])])


def test_latent_free_generator_has_zero_std():
    ens = pigan.uq_ensemble(linear_in_z(0.0), n_members=20)
    assert np.all(ens.std == 0.0)


def test_envelope_contains_members():
    ens = pigan.uq_ensemble(linear_in_z(), n_members=1000, grid=(np.linspace(0, 1, 9), [0.2, 0.7]))
    inside = (ens.members >= ens.lo2sd) & (ens.members <= ens.hi2sd)
    assert inside.mean(axis=0).min() >= 0.9
    assert np.all(ens.std >= 0)
    assert np.all(ens.mean >= ens.members.min(axis=0)) and np.all(ens.mean <= ens.members.max(axis=0))


def test_ensemble_shapes_csv_and_determinism():
    gen = gen_net(4)
    a = pigan.uq_ensemble(gen, n_members=2)
    b = pigan.uq_ensemble(gen, n_members=2)
    assert a.members.shape == (2, 5, 256)
    text = a.to_csv()
    assert text == b.to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,x,mean,std,lo2sd,hi2sd"
    assert len(lines) == 1 + 5 * 256
    assert np.all(np.isfinite(a.std))
    assert a.members_csv().splitlines()[0] == "member,t,x,s"


def test_ensemble_errors():
    with pytest.raises(ConfigError):
        pigan.uq_ensemble(gen_net(), n_members=1)
    with pytest.raises(ConfigError):
        pigan.uq_ensemble(network.init_xavier(network.NetSpec()), n_members=5)


def test_mean_prediction_averages_members():
    gen = gen_net(5)
    x, t = np.array([0.1, 0.5]), np.array([0.3, 0.3])
    zs = np.random.default_rng(12345).standard_normal((64, 1))
    assert np.allclose(pigan.mean_prediction(gen, x, t), pigan.evaluate_members(gen, x, t, zs).mean(axis=0))
