import numpy as np
import pytest

from circle import autoencoder as A
from circle.dataset import MultiViewDataset, SynthSpec, generate_synthetic, synthesize
from circle.errors import PreconditionError, ShapeError
from circle.graph import build_relation_graphs, fuse_cross_view
from circle.loss import BatchBundle, reconstruction_loss
from circle.trainer import (
    OptimizerState,
    TrainConfig,
    adam_step,
    epoch_batches,
    fit,
    train_epoch,
    write_curve_csv,
)


@pytest.fixture(scope="module")
def tiny():
    return synthesize(SynthSpec(samples_per_cluster=20, dims=(9, 6, 7), unaligned_fraction=0.5, seed=1))


def small_config(**kw):
    base = dict(hidden=(16, 12, 8), dz=4, batch_size=32, epochs=5, k=3, seed=2)
    base.update(kw)
    return TrainConfig(**base)


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        state = OptimizerState.zeros_like(p)
        adam_step(p, [np.zeros(2)], state, TrainConfig())
        np.testing.assert_array_equal(p[0], [1.0, -2.0])
        assert state.step == 1

    def test_first_step_scalar(self):
        p = [np.array([0.3])]
        state = OptimizerState.zeros_like(p)
        adam_step(p, [np.array([0.5])], state, TrainConfig(lr=1e-3))
        # m = 0.05, v = 0.00025; bias correction gives m_hat = 0.5, v_hat = 0.25
        assert p[0][0] == pytest.approx(0.3 - 1e-3 * 0.5 / (0.5 + 1e-8), abs=1e-16)

    def test_two_steps_hand_trace(self):
        p = [np.array([0.0])]
        state = OptimizerState.zeros_like(p)
        cfg = TrainConfig(lr=0.1)
        adam_step(p, [np.array([1.0])], state, cfg)
        adam_step(p, [np.array([-2.0])], state, cfg)
        m = 0.9 * 0.1 + 0.1 * -2.0
        v = 0.999 * 0.001 + 0.001 * 4.0
        step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        assert p[0][0] == pytest.approx(-0.1 * 1 / (1 + 1e-8) - step2, abs=1e-15)

    def test_deterministic(self, rng):
        grads = [rng.normal(size=(3, 2)) for _ in range(4)]
        outs = []
        for _ in range(2):
            p = [np.ones((3, 2))]
            st = OptimizerState.zeros_like(p)
            for g in grads:
                adam_step(p, [g], st, TrainConfig())
            outs.append(p[0].tobytes())
        assert outs[0] == outs[1]

    def test_shape_mismatch(self):
        p = [np.ones(3)]
        with pytest.raises(ShapeError):
            adam_step(p, [np.ones(2)], OptimizerState.zeros_like(p), TrainConfig())


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(batch_size=0), dict(epochs=0), dict(lr=0.0), dict(lam=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(PreconditionError):
            TrainConfig(**kw)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.lam, c.k, c.dz, c.batch_size, c.epochs, c.lr) == (1e-2, 3, 32, 256, 500, 1e-3)
        assert (c.beta1, c.beta2, c.eps) == (0.9, 0.999, 1e-8)


class TestEpoch:
    def test_batches_cover_everything(self):
        batches = epoch_batches(70, 32, [0, 1])
        assert [len(b) for b in batches] == [32, 32, 6]
        assert sorted(np.concatenate(batches)) == list(range(70))

    def test_one_batch_when_m_exceeds_n(self):
        assert len(epoch_batches(50, 64, 0)) == 1

    def test_reconstruction_decreases_without_contrastive(self, tiny):
        cfg = small_config(lam=0.0)
        _, curve = fit(tiny, cfg)
        rec = [r.reconstruction for r in curve]
        assert all(b < a for a, b in zip(rec, rec[1:]))

    def test_report_reproducible(self, tiny):
        cfg = small_config(lam=1.0)
        cross = fuse_cross_view(build_relation_graphs(tiny, cfg.k), tiny)
        reports = []
        for _ in range(2):
            m = A.init(tiny.dims, cfg.hidden, cfg.dz, cfg.seed)
            st = OptimizerState.zeros_like(m.parameters())
            _, _, rep = train_epoch(m, tiny, cross, st, cfg, epoch_seed=[7, 1])
            reports.append((rep.reconstruction, rep.contrastive, rep.total))
        assert reports[0] == reports[1]


class TestFit:
    def test_curve_length_and_csv(self, tiny, tmp_path):
        _, curve = fit(tiny, small_config(epochs=3))
        assert [r.epoch for r in curve] == [1, 2, 3]
        write_curve_csv(curve, tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "epoch,L_REC,L_CGC,total" and len(lines) == 4

    def test_total_loss_decreases(self, tiny):
        _, curve = fit(tiny, small_config(epochs=100, lam=1.0))
        assert curve[-1].total < curve[0].total

    def test_deterministic(self, tiny):
        a, ca = fit(tiny, small_config(lam=1.0))
        b, cb = fit(tiny, small_config(lam=1.0))
        for x, y in zip(a.parameters(), b.parameters()):
            assert x.tobytes() == y.tobytes()
        assert [r.total for r in ca] == [r.total for r in cb]

    def test_ground_truth_is_not_used(self, tiny):
        # any other valid correspondence for the shuffled rows must not change training
        rng = np.random.default_rng(0)
        rows = tiny.unaligned_indices
        corr = [c.copy() for c in tiny.true_correspondence]
        for v in (1, 2):
            corr[v][rows] = rows[rng.permutation(rows.size)]
        other = MultiViewDataset(views=tiny.views, labels=None, aligned_mask=tiny.aligned_mask,
                                 true_correspondence=corr)
        a, _ = fit(tiny, small_config(lam=1.0, epochs=2))
        b, _ = fit(other, small_config(lam=1.0, epochs=2))
        for x, y in zip(a.parameters(), b.parameters()):
            assert x.tobytes() == y.tobytes()

    def test_lambda_zero_matches_independent_views(self, tiny):
        cfg = small_config(lam=0.0, epochs=3)
        model, _ = fit(tiny, cfg)

        # reference: each view's autoencoder trained alone on its own reconstruction term
        ref = A.init(tiny.dims, cfg.hidden, cfg.dz, cfg.seed)
        n_views = tiny.n_views
        states = [OptimizerState.zeros_like(ref.encoders[v].parameters() + ref.decoders[v].parameters())
                  for v in range(n_views)]
        for epoch in range(1, cfg.epochs + 1):
            for pos in epoch_batches(tiny.n_samples, cfg.batch_size, [cfg.seed, epoch]):
                for v in range(n_views):
                    x = tiny.views[v][pos]
                    z, te = A.encode(ref, v, x)
                    xh, td = A.decode(ref, v, z)
                    g = 2.0 * (1.0 / (len(pos) * n_views)) * (xh - x)
                    enc, dec, _ = A.backward(ref, v, te, td, None, g)
                    params = ref.encoders[v].parameters() + ref.decoders[v].parameters()
                    adam_step(params, A.flatten_grads([(enc, dec)]), states[v], cfg)
                ref.mark_updated()
        for x, y in zip(model.parameters(), ref.parameters()):
            assert x.tobytes() == y.tobytes()
