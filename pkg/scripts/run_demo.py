import sys
import os
current = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.abspath(os.path.join(current, ".."))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from pathlib import Path

from knee_xai.core.orchestrator import Orchestrator, load_config
from knee_xai.core.schemas import AttributionMethod
from knee_xai.core.utils import format_metric, setup_logger

CONFIGS = Path(project_root) / "data" / "configs"


def get_user_choice():
    print("Select model config (resnet_tiny, inception_tiny, vit_two_stage, unet, unet_mlp):", end=" ")
    name = input().strip() or "resnet_tiny"
    print("Epochs (default 2):", end=" ")
    try:
        epochs = int(input().strip() or 2)
    except Exception:
        epochs = 2
    print("Phantom count (default 24):", end=" ")
    try:
        count = int(input().strip() or 24)
    except Exception:
        count = 24
    return name, epochs, count


def shrink(config, epochs, count, out_dir):
    """Desk-sized version of a bundled config."""
    raw = config.model_dump(mode="json")
    raw["epochs"] = epochs
    raw["output_dir"] = str(out_dir)
    raw["data"]["count"] = count
    if raw["data"].get("phantom"):
        raw["data"]["phantom"]["edge"] = 32
        raw["data"]["phantom"]["s_range"] = [3, 5]
        raw["data"]["phantom"]["lesion_size"] = [2, 3]
    raw["model"]["input_edge"] = 32
    return config.model_validate(raw)


def main():
    logger = setup_logger()
    orch = Orchestrator(logger)
    print("--- knee_xai CLI Demo ---")
    name, epochs, count = get_user_choice()
    config = shrink(load_config(CONFIGS / f"{name}.json"), epochs, count, Path("runs") / "demo" / name)

    print("\n=== Train, evaluate, report ===")
    result = orch.run(config)
    if result["errors"]:
        print("Errors:", result["errors"])
        return 1
    report = result["report"]
    for key in ("auc", "accuracy", "psnr_db", "ssim"):
        print(f"{key:>9}: {format_metric(report.get(key))}")
    print(f"\nFiles: {result['files']}")

    print("\n=== Grad-CAM on a held-out phantom ===")
    phantoms = orch.phantoms(config.data.phantom.model_copy(update={"seed": 99}), 1, Path("runs") / "demo" / "held_out")
    volume = Path(phantoms["manifest"]).parent / "volume_0000.npy"
    checkpoint = result["record"]["best_checkpoint"] or result["record"]["final_checkpoint"]
    index = orch.attribute(checkpoint, volume, AttributionMethod.GRADCAM, Path("runs") / "demo" / "maps")
    print(f"{len(index['slices'])} overlay(s) for {index['patient_id']} (target {index['target']}, "
          f"layer {index['tap_layer']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
