import attrs
import pytest
import torch
from ruamel.yaml import YAML

from ebnet.arch import build_network
from ebnet.checkpoint import load_checkpoint
from ebnet.data import make_loader
from ebnet.errors import CheckpointVersionError, ConfigError
from ebnet.graph import binary_convs, expert_convs
from ebnet.trainer import (
    ProxyTrainer,
    TrainingPolicy,
    adapt_to_dataset,
    binarize_weights,
    define_policy,
    evaluate,
    finished_steps,
    input,
    load_model,
    policy_step,
    run_stage2_from,
    save_model,
    spec,
    state,
    transient,
)
import ebnet.trainer.policy as policy_module


def _policy(tiny_arch, tiny_bundle, cfg, out_dir=None, **changes) -> TrainingPolicy:
    return TrainingPolicy(arch=tiny_arch, config=cfg, seed=0, data=tiny_bundle, out_dir=out_dir, **changes)


def test_full_policy_writes_tagged_snapshots(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path):
    policy = _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path)
    model = policy.run()
    assert finished_steps(policy) == ["step1", "step2", "step3", "step4"]
    for step in ("step1", "step2", "step3", "step4"):
        assert (tmp_path / f"{step}.ckpt").is_file()
    for step in ("step1", "step3", "step4"):
        assert (tmp_path / f"metrics_{step}.csv").is_file()
    assert (tmp_path / "spec.yaml").is_file()
    assert model.spec == tiny_arch
    assert all(conv.weight_mode == "binary" for _, conv in binary_convs(model))

    step1 = load_checkpoint(tmp_path / "step1.ckpt")
    assert step1.arch.n_experts == 1
    assert step1.meta["finished"] == ["step1"]
    assert load_checkpoint(tmp_path / "step3.ckpt").arch.n_experts == 2


def test_spec_file_records_the_run(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path):
    _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path).run(until="step1")
    doc = YAML(typ="safe").load((tmp_path / "spec.yaml").read_text())
    assert doc["spec_fields"]["arch"]["n_experts"] == 2
    assert doc["spec_fields"]["seed"] == 0
    assert doc["field_schema"]["data"] == "input"
    assert doc["field_schema"]["model"] == "state"


def test_finished_steps_are_restored(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path, monkeypatch):
    first = _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path)
    trained = first.run()

    def no_training(*args, **kwargs):
        raise AssertionError("restored steps must not train")

    monkeypatch.setattr(policy_module, "train_stage", no_training)
    second = _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path)
    restored = second.run()
    assert second.history == first.history
    assert second.weights == "binary"
    x = torch.randn(4, 3, 8, 8)
    with torch.no_grad():
        assert torch.equal(restored.eval()(x), trained.eval()(x))


def test_changed_spec_is_rejected(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path):
    _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path).run(until="step1")
    other = TrainingPolicy(arch=tiny_arch, config=tiny_policy_config, seed=1, data=tiny_bundle, out_dir=tmp_path)
    with pytest.raises(CheckpointVersionError):
        other.run()


def test_snapshot_gap_is_rejected(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path):
    _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path).run(until="step2")
    (tmp_path / "step2.ckpt").rename(tmp_path / "step3.ckpt")
    with pytest.raises(CheckpointVersionError):
        _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path).run()


def test_steps_run_in_order(tiny_arch, tiny_bundle, tiny_policy_config):
    policy = _policy(tiny_arch, tiny_bundle, tiny_policy_config)
    with pytest.raises(ConfigError):
        policy.train_experts()
    policy.train_single_expert()
    with pytest.raises(ConfigError):
        policy.train_single_expert()


def test_replication_invariance_after_step2(tiny_arch, tiny_bundle, tiny_policy_config):
    policy = _policy(tiny_arch.replace(n_experts=4), tiny_bundle, tiny_policy_config)
    model = policy.run(until="step2").eval()
    x = torch.randn(5, 3, 8, 8)
    with torch.no_grad():
        before = model(x)
        for _, conv in expert_convs(model):
            conv.bank.omega.mul_(-3.0).add_(0.5)
        assert torch.equal(model(x), before)


def test_single_expert_stage1_trains_once(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path):
    policy = _policy(tiny_arch.replace(n_experts=1), tiny_bundle, tiny_policy_config, tmp_path)
    policy.run(until="step3")
    assert set(policy.history) == {"step1"}
    assert not (tmp_path / "step4.ckpt").exists()


def test_dataset_is_required(tiny_arch, tiny_policy_config):
    with pytest.raises(ConfigError):
        TrainingPolicy(arch=tiny_arch, config=tiny_policy_config).run()


def test_saved_model_reproduces_accuracy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path):
    policy = _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path)
    policy.run()
    model, meta = load_model(tmp_path / "step4.ckpt")
    assert meta["state"]["weights"] == "binary"
    report = evaluate(model, make_loader(tiny_bundle, split="test", batch_size=16, seed=0), max_batches=2)
    recorded = policy.metrics("step4").final
    assert report.top1 == recorded.val_top1
    assert report.top5 == recorded.val_top5


def test_stage2_from_stage1_checkpoint(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path):
    _policy(tiny_arch, tiny_bundle, tiny_policy_config, tmp_path).run(until="step3")
    model, metrics = run_stage2_from(tmp_path / "step3.ckpt", tiny_bundle, tiny_policy_config.stage2)
    assert len(metrics.epochs) == tiny_policy_config.stage2.epochs
    assert all(conv.weight_mode == "binary" for _, conv in binary_convs(model))
    with pytest.raises(CheckpointVersionError):
        run_stage2_from(tmp_path / "step3.ckpt", tiny_bundle, tiny_policy_config.stage2, arch=tiny_arch.replace(n_experts=4))


def test_policy_fields_are_validated():
    with pytest.raises(ValueError):
        spec(init=False)
    with pytest.raises(ValueError):
        input(init=False)
    with pytest.raises(ValueError):
        policy_step(id="bad id", order=1)

    with pytest.raises(ValueError):

        @define_policy(save_path_field="where")
        class NoSavePath:
            where: str = spec(default="x")

            @policy_step(id="a", order=1)
            def a(self) -> None:
                pass


def test_minimal_policy_without_save_path():
    @define_policy(save_path_field="out")
    class Counter:
        n: int = spec(default=2)
        out: str | None = transient(default=None)
        value: int = state(default=0)

        @policy_step(id="first", order=1)
        def first(self) -> None:
            self.value += self.n

        @policy_step(id="second", order=2)
        def second(self) -> None:
            self.value *= 10

    c = Counter()
    c.first()
    c.second()
    assert c.value == 20
    assert finished_steps(c) == ["first", "second"]
    with pytest.raises(attrs.exceptions.FrozenAttributeError):
        c.n = 3


def test_save_model_reopens(tiny_arch, tmp_path):
    torch.manual_seed(7)
    model = build_network(tiny_arch)
    binarize_weights(model)
    history = {"step4": [{"epoch": 0, "lr": 1e-4, "train_loss": 0.5, "val_top1": 50.0, "val_top5": 100.0}]}
    save_model(tmp_path / "final.ckpt", model, step="step4", seed=3, history=history)
    reopened, meta = load_model(tmp_path / "final.ckpt")
    assert meta["state"] == {"weights": "binary", "history": history}
    assert reopened.spec == tiny_arch
    x = torch.randn(3, 3, 8, 8)
    with torch.no_grad():
        assert torch.equal(reopened(x), model.eval()(x))


def test_proxy_scores_are_reproducible(tiny_arch, tiny_bundle):
    proxy = ProxyTrainer(tiny_bundle, epochs=1, batch_size=16, max_batches=2)
    seed_arch = tiny_arch.replace(stem="imagenet7x7", input_resolution=224, classes=1000)
    assert adapt_to_dataset(seed_arch, tiny_bundle) == tiny_arch
    first = proxy(seed_arch)
    assert 0.0 <= first <= 100.0
    assert proxy(seed_arch) == first
