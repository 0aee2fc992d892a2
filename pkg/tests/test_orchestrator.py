import pytest

from knee_xai.core import Orchestrator
from knee_xai.core.schemas import PhantomParams


def test_phantoms_then_empty_report(tmp_path):
    orch = Orchestrator()
    result = orch.phantoms(PhantomParams(edge=16, s_range=(2, 3), lesion_size=(2, 2)), 2, tmp_path / "set")
    assert result["count"] == 2
    assert (tmp_path / "set" / "volume_0001.npy").exists()
    with pytest.raises(FileNotFoundError):
        orch.report(tmp_path / "set", tmp_path / "report")


def test_logs_go_under_the_output_root(output_root):
    Orchestrator().logger.info("hello")
    assert (output_root / "logs" / "run.log").exists()


def test_unplaced_config_lands_under_the_output_root(make_config, output_root):
    config = make_config(epochs=0)
    unplaced = config.model_validate(config.model_dump(mode="json", exclude={"output_dir"}))
    record = Orchestrator().train(unplaced)
    assert record["config"]["output_dir"] == str(output_root / "tiny")
    assert (output_root / "tiny" / "final.ckpt").exists()


@pytest.mark.slow
def test_orchestrator_flow_trains_evaluates_and_reports(make_config, tmp_path):
    result = Orchestrator().run(make_config(name="flow", epochs=2))
    assert result["errors"] == []
    assert len(result["record"]["train_loss"]) == 2
    assert result["report"]["n_samples"] == 3
    assert set(result["files"]) >= {"table", "curves"}
    assert "| flow |" in (tmp_path / "flow" / "report" / "table.md").read_text()


def test_training_failure_is_reported_not_raised(make_config, monkeypatch):
    orch = Orchestrator()

    def explode(config, dataset=None):
        raise RuntimeError("boom")

    monkeypatch.setattr(orch.trainer, "train", explode)
    result = orch.run(make_config(name="broken"))
    assert result["record"] is None
    assert result["errors"] == ["Training error: boom"]
