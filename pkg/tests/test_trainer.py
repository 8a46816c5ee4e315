import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import tiny_config
from dilearn import trainer
from dilearn.datagen import DomainSequence, DomainShift, Samples, SyntheticConfig, generate_synthetic_stream
from dilearn.exceptions import ConfigError, NumericError, TrainingError
from dilearn.model import class_loss_and_grad, ewc_penalty_and_grad
from dilearn.trainer import (MethodConfig, RunLog, init_state, parse_snapshot_policy, run_sequence, step_budget,
                             train_joint, train_task)


def _trajectory(seq, cfg, tasks=None):
    log = RunLog()
    state = init_state(seq.feature_dim, seq.num_classes, cfg, log)
    for task in seq.tasks[:tasks]:
        train_task(state, task, cfg)
    return state, log.rows


def _same(a, b):
    return a.params.equal(b.params)


class TestConfig:
    def test_snapshot_policy(self):
        assert parse_snapshot_policy("task_boundary") == ("task_boundary", None)
        assert parse_snapshot_policy("every_n_steps(50)") == ("every_n_steps", 50)
        for bad in ("every_n_steps(0)", "sometimes"):
            with pytest.raises(ConfigError):
                parse_snapshot_policy(bad)

    def test_validate(self):
        with pytest.raises(ConfigError) as err:
            MethodConfig(method="der").validate()
        assert err.value.field == "method"
        with pytest.raises(ConfigError):
            MethodConfig(batch_size=0).validate()

    def test_with_routes_loss_keys(self):
        cfg = MethodConfig().with_(lambda_=0.0, buffer_capacity=3)
        assert cfg.loss.lambda_ == 0.0 and cfg.buffer_capacity == 3

    def test_defaults(self):
        cfg = MethodConfig()
        assert (cfg.lr, cfg.momentum, cfg.batch_size, cfg.lambda_ewc) == (1e-3, 0.9, 16, 3e3)
        assert (cfg.loss.temperature, cfg.loss.lambda_) == (2.0, 1.0)


class TestEquivalences:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_drift_first_task_is_naive(self, tiny_sequence, seed):
        a, la = _trajectory(tiny_sequence, MethodConfig("drift", seed=seed), tasks=1)
        b, lb = _trajectory(tiny_sequence, MethodConfig("naive", seed=seed), tasks=1)
        assert _same(a, b)
        assert [r[2] for r in la] == [r[2] for r in lb]

    @pytest.mark.parametrize("seed", [0, 1])
    def test_degenerate_drift_is_naive(self, tiny_sequence, seed):
        a, _ = _trajectory(tiny_sequence, MethodConfig("drift", seed=seed, buffer_capacity=0).with_(lambda_=0.0))
        b, _ = _trajectory(tiny_sequence, MethodConfig("naive", seed=seed))
        assert _same(a, b)

    def test_ewc_zero_is_naive(self, tiny_sequence):
        a, _ = _trajectory(tiny_sequence, MethodConfig("ewc", lambda_ewc=0.0))
        b, _ = _trajectory(tiny_sequence, MethodConfig("naive"))
        assert _same(a, b)

    def test_lwf(self, tiny_sequence):
        assert _same(_trajectory(tiny_sequence, MethodConfig("lwf"), tasks=1)[0],
                     _trajectory(tiny_sequence, MethodConfig("naive"), tasks=1)[0])
        assert _same(_trajectory(tiny_sequence, MethodConfig("lwf").with_(lambda_=0.0))[0],
                     _trajectory(tiny_sequence, MethodConfig("naive"))[0])

    def test_joint_single_task_is_naive(self, tiny_sequence):
        one = DomainSequence(tiny_sequence.tasks[:1], tiny_sequence.num_classes, tiny_sequence.feature_dim)
        naive, _ = _trajectory(one, MethodConfig("naive", seed=4))
        assert train_joint(one, MethodConfig("joint", seed=4)).equal(naive.params)


class TestDrift:
    def test_replay_helps_old_domain(self):
        wins = 0
        for seed in range(5):
            cfg = SyntheticConfig(num_domains=2, domain_shift=DomainShift(rotation_angle=np.pi / 3), seed=seed)
            seq = generate_synthetic_stream(cfg)
            drift = run_sequence(seq, MethodConfig("drift", buffer_capacity=100, seed=seed))
            naive = run_sequence(seq, MethodConfig("naive", seed=seed))
            wins += drift[0, 1] > naive[0, 1]
        assert wins >= 4

    def test_buffer_never_holds_test_samples(self, tiny_sequence):
        cfg = MethodConfig("drift", buffer_capacity=30)
        state = init_state(tiny_sequence.feature_dim, tiny_sequence.num_classes, cfg)
        test_ids = set()
        for task in tiny_sequence:
            test_ids |= set(task.test.ids.tolist())
            train_task(state, task, cfg)
            assert not test_ids & {s.id for s in state.buffer.items}
            assert len(state.buffer) <= 30
        assert state.buffer.seen_count == sum(len(t.train) for t in tiny_sequence)

    def test_buffer_filled_after_task(self, tiny_sequence):
        cfg = MethodConfig("drift", buffer_capacity=10)
        state, rows = _trajectory(tiny_sequence, cfg, tasks=1)
        # replay is empty throughout the first task
        assert {r[5] for r in rows} == {0}
        assert len(state.buffer) == 10

    @pytest.mark.parametrize("method", ["drift_random", "drift_herding", "drift_entropy"])
    def test_selection_modes(self, tiny_sequence, method):
        cfg = MethodConfig(method, buffer_capacity=12)
        state = init_state(tiny_sequence.feature_dim, tiny_sequence.num_classes, cfg)
        for k, task in enumerate(tiny_sequence):
            train_task(state, task, cfg)
            doms = [s.domain_id for s in state.buffer.items]
            assert len(doms) == 12
            assert all(doms.count(t.domain_id) == 12 // (k + 1) for t in tiny_sequence.tasks[:k + 1])


class TestTeacher:
    def test_task_boundary(self, tiny_sequence):
        cfg = MethodConfig("drift")
        state, _ = _trajectory(tiny_sequence, cfg, tasks=1)
        assert state.teacher.equal(state.params) and state.teacher is not state.params

    def test_every_n_steps(self):
        cfg = tiny_config(num_domains=1, num_classes=2, samples_per_class_per_domain=100)
        seq = generate_synthetic_stream(cfg)
        assert len(seq[0].train) == 160
        state, rows = _trajectory(seq, MethodConfig("drift", snapshot_policy="every_n_steps(50)"))
        assert len(rows) == 200 and state.teacher_refreshes == 4

    def test_every_n_beyond_run_means_no_teacher(self, tiny_sequence):
        cfg = MethodConfig("drift", snapshot_policy="every_n_steps(100000)")
        state, _ = _trajectory(tiny_sequence, cfg)
        assert state.teacher is None and state.teacher_refreshes == 0


class TestEWC:
    def test_penalised_optimum(self):
        cfg = SyntheticConfig(num_domains=2, num_classes=2, feature_dim=2, samples_per_class_per_domain=20,
                              domain_shift=DomainShift(rotation_angle=np.pi / 2), seed=3)
        seq = generate_synthetic_stream(cfg)
        full = len(seq[1].train)
        method = MethodConfig("ewc", lr=0.05, momentum=0.9, epochs_per_task=3000, batch_size=full,
                              lambda_ewc=30.0)
        state = init_state(2, 2, method)
        for task in seq:
            train_task(state, task, method)
        anchor, fisher = state.ewc_anchors[0]
        X, y = seq[1].train.X, seq[1].train.y
        p = state.params
        lam = 30.0 / full

        def objective(theta):
            q = p.from_flat(theta)
            loss, g = class_loss_and_grad(q, X, y)
            pen, gp = ewc_penalty_and_grad(q, anchor, fisher, lam)
            return loss + pen, np.concatenate([(g[k] + gp[k]).ravel() for k in q.names])

        best = minimize(objective, anchor.flat(), jac=True, method="BFGS", options={"gtol": 1e-10})
        assert np.max(np.abs(p.flat() - best.x)) < 1e-3

    def test_anchor_per_task(self, tiny_sequence):
        state, _ = _trajectory(tiny_sequence, MethodConfig("ewc"))
        assert len(state.ewc_anchors) == 3
        for _, F in state.ewc_anchors:
            assert sum(float(v.sum()) for v in F.values()) == pytest.approx(1.0)


class TestRunSequence:
    def test_deterministic(self, tiny_sequence):
        for method in ("drift", "ewc", "joint", "drift_herding"):
            a = run_sequence(tiny_sequence, MethodConfig(method, seed=2))
            b = run_sequence(tiny_sequence, MethodConfig(method, seed=2))
            assert np.array_equal(a.a, b.a)

    def test_single_task(self, tiny_sequence):
        one = DomainSequence(tiny_sequence.tasks[:1], 3, tiny_sequence.feature_dim)
        m = run_sequence(one, MethodConfig("drift"))
        assert m.T == 1 and m.is_complete()

    def test_diagonal_beats_chance(self):
        seq = generate_synthetic_stream(tiny_config(noise_std=0.3))
        for method in trainer.METHODS:
            m = run_sequence(seq, MethodConfig(method, buffer_capacity=30))
            assert np.all(np.diag(m.a) >= 100 / 3 + 30), method

    def test_untrained_model_is_at_chance(self):
        for seed in range(3):
            seq = generate_synthetic_stream(tiny_config(seed=seed))
            state = init_state(seq.feature_dim, seq.num_classes, MethodConfig(seed=seed))
            state.params.tensors["W"][:] = 0
            for t in seq:
                acc = trainer.evaluate_column(state.params, seq)
                assert all(abs(a - 100 / 3) <= 5 for a in acc)

    def test_naive_forgets(self):
        forgets = 0
        for seed in range(5):
            seq = generate_synthetic_stream(SyntheticConfig(num_domains=7, samples_per_class_per_domain=40,
                                                            seed=seed))
            m = run_sequence(seq, MethodConfig("naive", seed=seed))
            forgets += m[0, 6] < m[0, 0]
        assert forgets >= 4

    def test_joint_columns_and_budget(self, tiny_sequence):
        m = run_sequence(tiny_sequence, MethodConfig("joint"))
        assert all(np.array_equal(m[:, 0], m[:, t]) for t in range(3))
        log = RunLog()
        train_joint(tiny_sequence, MethodConfig("joint"), log)
        assert len(log.rows) == step_budget(tiny_sequence, MethodConfig("joint"))

    def test_long_run_stays_finite(self):
        seq = generate_synthetic_stream(SyntheticConfig(num_domains=2, seed=1))
        cfg = MethodConfig("drift", arch="mlp", epochs_per_task=17)
        state, rows = _trajectory(seq, cfg)
        assert len(rows) >= 1000
        assert np.all(np.isfinite(state.params.flat()))
        assert state.params.tensors["W2"].shape[0] == seq.num_classes

    def test_failure_keeps_partial_matrix(self, tiny_sequence, monkeypatch):
        real = trainer.sgd_update

        def flaky(p, opt, grads, calls=[0]):
            calls[0] += 1
            if calls[0] > 2 * step_budget(tiny_sequence, MethodConfig()) // 3:
                raise NumericError("boom")
            return real(p, opt, grads)

        monkeypatch.setattr(trainer, "sgd_update", flaky)
        with pytest.raises(TrainingError) as err:
            run_sequence(tiny_sequence, MethodConfig("naive"))
        partial = err.value.partial
        assert not np.isnan(partial[:, 1]).any() and np.isnan(partial[:, 2]).all()

    def test_run_log_file(self, tmp_path, tiny_sequence):
        log = RunLog(tmp_path / "log.csv", flush_every=7)
        run_sequence(tiny_sequence, MethodConfig("drift"), log=log)
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == ",".join(trainer.RUN_LOG_HEADER)
        assert len(lines) == 1 + step_budget(tiny_sequence, MethodConfig())

    def test_empty_train_rejected(self, tiny_sequence):
        from dilearn.datagen import DomainTask
        from dilearn.exceptions import InputError
        cfg = MethodConfig("naive")
        state = init_state(6, 3, cfg)
        with pytest.raises(InputError):
            train_task(state, DomainTask(9, Samples.empty(6), Samples.empty(6)), cfg)
