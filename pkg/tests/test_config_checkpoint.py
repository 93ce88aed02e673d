import json

import numpy as np
import pytest

from depthfocus import tensor as T
from depthfocus.checkpoint import load_checkpoint, save_checkpoint
from depthfocus.config import RunConfig, apply_overrides, load_config
from depthfocus.data import synthesize
from depthfocus.encoder import EncoderConfig
from depthfocus.model import ModelConfig
from depthfocus.nn import Parameter
from depthfocus.optim import Adam
from depthfocus.train import Trainer, TrainingDiverged, load_model


def tiny_config(**kw):
    model = ModelConfig(image_size=32, encoder=EncoderConfig(embed_dim=16, num_heads=2, num_blocks=4))
    return RunConfig(stack_size=3, grad_accum=2, model=model, **kw)


@pytest.fixture(scope="module")
def samples():
    return [synthesize(s, n=3, size=32) for s in (1, 2)]


class TestCheckpoint:
    def test_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b": np.float32([np.pi]),
                   "c": rng.normal(size=(2, 1, 5)).astype(np.float32)}
        save_checkpoint(tmp_path / "m.json", tensors, {"step": 3})
        back, meta = load_checkpoint(tmp_path / "m.json")
        assert meta == {"step": 3}
        for k, v in tensors.items():
            assert back[k].shape == v.shape and back[k].tobytes() == v.tobytes()

    def test_manifest_layout(self, tmp_path):
        save_checkpoint(tmp_path / "m.json", {"x": np.zeros((2, 3), np.float32), "y": np.ones(4, np.float32)})
        manifest = json.loads((tmp_path / "m.json").read_text())
        assert manifest["blob"] == "m.bin"
        assert [(e["name"], e["offset"], e["length"], e["dtype"]) for e in manifest["tensors"]] == [
            ("x", 0, 24, "<f4"), ("y", 24, 16, "<f4")]
        assert (tmp_path / "m.bin").stat().st_size == 40

    def test_truncated_blob(self, tmp_path):
        save_checkpoint(tmp_path / "m.json", {"x": np.zeros(8, np.float32)})
        (tmp_path / "m.bin").write_bytes(bytes(8))
        with pytest.raises(ValueError, match="past the end"):
            load_checkpoint(tmp_path / "m.json")


class TestConfig:
    def test_overrides(self):
        d = RunConfig().to_dict()
        apply_overrides(d, ["lr=0.001", "model.fusion.threshold=0.2", "model.no_lstm=true"])
        cfg = RunConfig.from_dict(d)
        assert cfg.lr == 0.001 and cfg.model.fusion.threshold == 0.2 and cfg.model.no_lstm

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            apply_overrides(RunConfig().to_dict(), ["model.nope=1"])
        with pytest.raises(ValueError):
            apply_overrides(RunConfig().to_dict(), ["lr"])

    def test_files_and_env(self, tmp_path):
        (tmp_path / "c.toml").write_text("steps = 7\n[model.encoder]\nembed_dim = 32\n")
        cfg = load_config(tmp_path / "c.toml", ["seed=3"], env={"RUN_SEED": "11"})
        assert cfg.steps == 7 and cfg.model.encoder.embed_dim == 32 and cfg.seed == 11
        (tmp_path / "c.json").write_text(json.dumps({"grad_accum": 2}))
        assert load_config(tmp_path / "c.json", env={}).grad_accum == 2

    def test_schema_round_trip(self):
        cfg = tiny_config(seed=5)
        assert RunConfig.from_dict(json.loads(cfg.dumps())) == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(eval_space="log")
        with pytest.raises(ValueError):
            RunConfig(stack_size=0)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad = np.array([0.5, -3.0])
        opt = Adam({"p": p}, lr=0.1)
        opt.step()
        np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-6)

    def test_matches_reference_recurrence(self):
        rng = np.random.default_rng(0)
        with T.precision(np.float64):
            p = Parameter(rng.normal(size=3))
        x = p.data.copy()
        m = v = np.zeros(3)
        opt = Adam({"p": p}, lr=0.01)
        for t in range(1, 6):
            g = rng.normal(size=3)
            p.grad = g
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, x, rtol=1e-12)


class TestTraining:
    def test_resume_is_bit_exact(self, tmp_path, samples):
        cfg = tiny_config()
        a = Trainer.create(cfg)
        for _ in range(2):
            a.train_step(samples)
        a.save(tmp_path / "ckpt.json")
        b = Trainer.load(tmp_path / "ckpt.json")
        assert b.step == 2 and b.losses == a.losses
        la, lb = a.train_step(samples), b.train_step(samples)
        assert la == lb
        for (_, pa), (_, pb) in zip(a.model.named_parameters(), b.model.named_parameters()):
            assert pa.data.tobytes() == pb.data.tobytes()

    def test_load_model(self, tmp_path, samples):
        t = Trainer.create(tiny_config())
        t.save(tmp_path / "c.json")
        model, cfg = load_model(tmp_path / "c.json")
        assert cfg == t.config
        assert model(samples[0].stack.frames).data.tobytes() == t.model(samples[0].stack.frames).data.tobytes()

    def test_seeded_runs_identical(self, samples):
        runs = []
        for _ in range(2):
            t = Trainer.create(tiny_config(seed=4))
            runs.append([t.train_step(samples) for _ in range(2)])
        assert runs[0] == runs[1]

    def test_divergence_names_step(self, samples):
        t = Trainer.create(tiny_config())
        t.train_step(samples)
        for p in t.model.parameters():
            p.data = p.data * np.nan
        with pytest.raises(TrainingDiverged, match="step 1") as info:
            t.train_step(samples)
        assert info.value.step == 1

    def test_length_augmentation(self):
        t = Trainer.create(tiny_config(length_augment=True, min_augment_length=2))
        lengths = {t._prefix_length(3, s) for s in range(40)}
        assert lengths == {2, 3}
        assert Trainer.create(tiny_config())._prefix_length(3, 5) == 3

    def test_gradients_stay_float32(self, samples):
        t = Trainer.create(tiny_config())
        t.stack_loss(samples[0]).backward()
        assert all(p.grad.dtype == np.float32 for p in t.model.parameters())
