import math
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np
import torch

from problems.models import ObjectiveKind
from simulator.exceptions import CheckpointError, ParameterError

from .checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from .models import ArchitectureMeta
from .networks import (
    DTYPE,
    GaussianPolicy,
    Mlp,
    Normalizer,
    StateEncoder,
    build_networks,
    compress_mask,
    log_compress,
    seeded_generator,
)

HALF_LOG_TWO_PI = 0.5 * math.log(2 * math.pi)


def constant_policy(mean, hidden=(4, 4)) -> GaussianPolicy:
    policy = GaussianPolicy(state_dim=2, action_dim=len(mean), hidden_sizes=hidden)
    with torch.no_grad():
        for p in policy.mean_net.parameters():
            p.zero_()
        policy.mean_net.net[-1].bias.copy_(torch.tensor(mean, dtype=DTYPE))
    return policy


def finite_difference_check(test, loss_fn, params, eps=1e-5, per_tensor=6):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    rng = np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        for k in rng.choice(flat.numel(), size=min(per_tensor, flat.numel()), replace=False):
            original = flat[k].item()
            with torch.no_grad():
                flat[k] = original + eps
                up = loss_fn().item()
                flat[k] = original - eps
                down = loss_fn().item()
                flat[k] = original
            fd = (up - down) / (2 * eps)
            analytic = g.view(-1)[k].item()
            worst = max(worst, abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-3))
    test.assertLessEqual(worst, 1e-4)


class MlpTests(TestCase):
    def test_zero_weights_return_bias(self):
        net = Mlp(3, 2, hidden_sizes=(5, 5))
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
            net.net[-1].bias.copy_(torch.tensor([1.5, -2.0], dtype=DTYPE))
        out = net(torch.randn(3, dtype=DTYPE))
        np.testing.assert_array_equal(out.detach().numpy(), [1.5, -2.0])

    def test_zero_input_zero_biases(self):
        net = Mlp(3, 2, hidden_sizes=(5, 5))
        with torch.no_grad():
            for layer in net.net:
                if isinstance(layer, torch.nn.Linear):
                    layer.bias.zero_()
        np.testing.assert_array_equal(net(torch.zeros(3, dtype=DTYPE)).detach().numpy(), [0.0, 0.0])

    def test_dimension_mismatch(self):
        with self.assertRaises(ParameterError):
            Mlp(3, 1)(torch.zeros(4, dtype=DTYPE))

    def test_same_seed_same_weights(self):
        first, _ = build_networks(6, 3, seed=11)
        second, _ = build_networks(6, 3, seed=11)
        for a, b in zip(first.parameters(), second.parameters()):
            self.assertTrue(torch.equal(a, b))


class LogProbTests(TestCase):
    def test_standard_normal_at_mean(self):
        policy = constant_policy([0.7])
        lp = policy.log_prob(torch.zeros(2, dtype=DTYPE), torch.tensor([0.7], dtype=DTYPE))
        self.assertAlmostEqual(lp.item(), -HALF_LOG_TWO_PI, places=12)

    def test_three_dimensions_add_up(self):
        policy = constant_policy([5.0, 5.0, 5.0])
        lp = policy.log_prob(torch.zeros(2, dtype=DTYPE), torch.tensor([5.0, 5.0, 5.0], dtype=DTYPE))
        self.assertAlmostEqual(lp.item(), -3 * HALF_LOG_TWO_PI, places=12)

    def test_moving_away_decreases_density(self):
        policy = constant_policy([0.0])
        state = torch.zeros(2, dtype=DTYPE)
        values = [policy.log_prob(state, torch.tensor([d], dtype=DTYPE)).item() for d in (0.0, 0.5, 1.0, 2.0)]
        self.assertTrue(all(b < a for a, b in zip(values, values[1:])))

    def test_density_integrates_to_one(self):
        policy = constant_policy([1.0])
        with torch.no_grad():
            policy.log_std.fill_(math.log(0.7))
        grid = torch.linspace(-15.0, 17.0, 64001, dtype=DTYPE)
        states = torch.zeros(grid.shape[0], 2, dtype=DTYPE)
        density = policy.log_prob(states, grid.unsqueeze(-1)).exp()
        self.assertLessEqual(abs(torch.trapezoid(density, grid).item() - 1.0), 1e-4)

    def test_sampling_is_reproducible(self):
        policy, _ = build_networks(4, 3, seed=2)
        state = torch.ones(4, dtype=DTYPE)
        a1, lp1 = policy.sample(state, seeded_generator(9))
        a2, lp2 = policy.sample(state, seeded_generator(9))
        np.testing.assert_array_equal(a1, a2)
        self.assertEqual(lp1, lp2)


class GradientTests(TestCase):
    def setUp(self):
        self.policy, self.value_net = build_networks(5, 3, seed=3, hidden_sizes=(8, 8), init_log_std=-0.3)
        gen = torch.Generator().manual_seed(4)
        self.states = torch.randn(7, 5, generator=gen, dtype=DTYPE)
        self.actions = torch.randn(7, 3, generator=gen, dtype=DTYPE)
        self.targets = torch.randn(7, generator=gen, dtype=DTYPE)

    def test_policy_gradients_match_finite_differences(self):
        params = list(self.policy.parameters())
        finite_difference_check(self, lambda: self.policy.log_prob(self.states, self.actions).mean(), params)

    def test_log_std_gradient_matches_finite_differences(self):
        finite_difference_check(
            self, lambda: self.policy.log_prob(self.states, self.actions).sum(), [self.policy.log_std]
        )

    def test_value_gradients_match_finite_differences(self):
        params = list(self.value_net.parameters())
        finite_difference_check(
            self, lambda: ((self.value_net(self.states).squeeze(-1) - self.targets) ** 2).mean(), params
        )

    def test_gradcheck_on_mean_network(self):
        net = Mlp(3, 2, hidden_sizes=(4, 4))
        inputs = torch.randn(5, 3, dtype=DTYPE, requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(net, (inputs,), eps=1e-6, atol=1e-8, rtol=1e-5))

    def test_zero_loss_weight_gives_zero_gradients(self):
        loss = 0.0 * self.policy.log_prob(self.states, self.actions).sum()
        loss.backward()
        for p in self.policy.parameters():
            self.assertTrue(torch.equal(p.grad, torch.zeros_like(p)))

    def test_gradient_vanishes_at_mean(self):
        mean = torch.tensor([1.0, -2.0], dtype=DTYPE, requires_grad=True)
        dist = torch.distributions.Normal(mean, torch.ones(2, dtype=DTYPE))
        (grad,) = torch.autograd.grad(dist.log_prob(torch.tensor([1.0, -2.0], dtype=DTYPE)).sum(), mean)
        np.testing.assert_array_equal(grad.numpy(), [0.0, 0.0])


class AdamTests(TestCase):
    def test_zero_gradient_leaves_parameters(self):
        net = Mlp(3, 1, hidden_sizes=(4, 4))
        before = [p.detach().clone() for p in net.parameters()]
        optimizer = torch.optim.Adam(net.parameters(), lr=1e-2)
        for p in net.parameters():
            p.grad = torch.zeros_like(p)
        optimizer.step()
        for a, b in zip(before, net.parameters()):
            self.assertTrue(torch.equal(a, b))

    def test_constant_gradient_steps_approach_lr(self):
        w = torch.nn.Parameter(torch.zeros(2, dtype=DTYPE))
        optimizer = torch.optim.Adam([w], lr=1e-3)
        for _ in range(200):
            w.grad = torch.tensor([3.0, -0.5], dtype=DTYPE)
            previous = w.detach().clone()
            optimizer.step()
        step = (w.detach() - previous).numpy()
        np.testing.assert_allclose(step, [-1e-3, 1e-3], rtol=1e-3)

    def test_identical_state_identical_update(self):
        results = []
        for _ in range(2):
            net = build_networks(3, 2, seed=5, hidden_sizes=(4, 4))[1]
            optimizer = torch.optim.Adam(net.parameters(), lr=1e-2)
            loss = net(torch.ones(3, dtype=DTYPE)).sum()
            loss.backward()
            optimizer.step()
            results.append([p.detach().clone() for p in net.parameters()])
        for a, b in zip(*results):
            self.assertTrue(torch.equal(a, b))


class NormalizerTests(TestCase):
    def test_streaming_matches_two_pass(self):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((1000, 4)) * [1.0, 10.0, 1e-3, 1e3] + [0.0, 5.0, -1.0, 1e4]
        norm = Normalizer(4)
        for chunk in np.array_split(data, 37):
            norm.update(chunk)
        np.testing.assert_allclose(norm.mean, data.mean(axis=0), rtol=0, atol=1e-9 * np.abs(data).max())
        np.testing.assert_allclose(norm.var, data.var(axis=0), rtol=1e-9)
        self.assertEqual(norm.count, 1000)

    def test_frozen_ignores_updates(self):
        norm = Normalizer(2)
        norm.update(np.ones((3, 2)))
        norm.freeze()
        norm.update(np.zeros((3, 2)))
        np.testing.assert_array_equal(norm.mean, [1.0, 1.0])


class EncoderTests(TestCase):
    def test_mask_layout(self):
        mask = compress_mask(ObjectiveKind.LOGISTIC, node_count=2, local_iterations=1, dimension=2)
        np.testing.assert_array_equal(mask, [1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 0])
        self.assertTrue(compress_mask(ObjectiveKind.L1_LASSO, 2, 3, 4).all())

    def test_log_compress_is_odd(self):
        z = np.array([-1e6, -1.0, 0.0, 1.0, 1e6])
        np.testing.assert_allclose(log_compress(z), -log_compress(-z))
        self.assertEqual(log_compress(np.array([0.0]))[0], 0.0)

    def test_eigenvalue_coordinates_stay_raw(self):
        encoder = StateEncoder(compress_mask(ObjectiveKind.LOGISTIC, 1, 1, 1))
        np.testing.assert_allclose(encoder.preprocess(np.array([math.e - 1, 1.0, 7.0])), [1.0, math.log(2), 7.0])

    def test_wrong_state_size(self):
        encoder = StateEncoder(np.ones(6, dtype=bool))
        with self.assertRaises(ParameterError):
            encoder.encode(np.zeros(5))


class CheckpointTests(TestCase):
    def make_checkpoint(self, dimension=10):
        arch = ArchitectureMeta(
            kind=ObjectiveKind.LEAST_SQUARES_LASSO, state_dim=2 * 1 * 3 * dimension, action_dim=3,
            node_count=2, dimension=dimension, local_iterations=1, hidden_sizes=(8, 8),
        )
        policy, value_net = build_networks(arch.state_dim, 3, seed=6, hidden_sizes=(8, 8))
        encoder = StateEncoder(compress_mask(arch.kind, 2, 1, dimension))
        encoder.observe(np.random.default_rng(0).standard_normal((20, arch.state_dim)))
        return Checkpoint(policy, value_net, encoder, arch, seed=6, policy_id="learned")

    def test_round_trip_is_bitwise(self):
        ckpt = self.make_checkpoint()
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(ckpt, Path(tmp) / "ckpt.json")
            loaded = load_checkpoint(path)
            for (na, a), (nb, b) in zip(ckpt.policy.state_dict().items(), loaded.policy.state_dict().items()):
                self.assertEqual(na, nb)
                self.assertTrue(torch.equal(a, b))
            for a, b in zip(ckpt.value_net.parameters(), loaded.value_net.parameters()):
                self.assertTrue(torch.equal(a, b))
            np.testing.assert_array_equal(loaded.encoder.normalizer.var, ckpt.encoder.normalizer.var)
            again = save_checkpoint(loaded, Path(tmp) / "again.json")
            self.assertEqual(path.read_bytes(), again.read_bytes())

    def test_truncated_file_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(self.make_checkpoint(), Path(tmp) / "ckpt.json")
            text = path.read_text()
            path.write_text(text[: len(text) // 2])
            with self.assertRaises(CheckpointError):
                load_checkpoint(path)

    def test_dimension_guard(self):
        ckpt = self.make_checkpoint(dimension=10)
        expected = ckpt.architecture.model_copy(update={"dimension": 9, "state_dim": 54})
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(ckpt, Path(tmp) / "ckpt.json")
            with self.assertRaises(CheckpointError):
                load_checkpoint(path, expected=expected)
