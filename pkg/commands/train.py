import click

from commands.common import (
    EXIT_BAD_INPUT,
    EXIT_MISMATCH,
    EXIT_TRAINING_ABORTED,
    config_option,
    fail,
)
from utils.config import build_variant, merge_config
from utils.errors import CheckpointError, ConfigError, ContractError, DatasetFormatError, NonFiniteLossError
from utils.pianoroll import load_dataset
from utils.trainer import TrainConfig, default_metrics_path, train


@click.command("train")
@click.option("--dataset", "dataset_path", required=True)
@click.option("--variant", type=click.IntRange(1, 3), default=None, help="Model variant 1, 2 or 3.")
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, help="Checkpoint file; metrics are written beside it.")
@click.option("--batch-size", type=int, default=None)
@click.option("--lambda1", type=float, default=None)
@click.option("--lambda2", type=float, default=None)
@click.option("--twod-layers", default=None, help="Comma list of generator layers fed the previous bar, e.g. 1,2.")
@click.option("--d-uses-prev", is_flag=True, default=None, help="Also feed the previous bar to the discriminator.")
@click.option("--checkpoint-every", type=int, default=None, help="Epochs between checkpoints (0 = final only).")
@click.option("--max-iterations", type=int, default=None)
@config_option
def command(dataset_path, variant, epochs, seed, out_path, batch_size, lambda1, lambda2,
            twod_layers, d_uses_prev, checkpoint_every, max_iterations, config_path):
    """Train a model variant on a preprocessed dataset."""
    flags = dict(variant=variant, epochs=epochs, seed=seed, batch_size=batch_size, lambda1=lambda1,
                 lambda2=lambda2, twod_layers=twod_layers, d_uses_prev=d_uses_prev,
                 checkpoint_every=checkpoint_every, max_iterations=max_iterations)
    try:
        cfg = merge_config(flags, config_path)
        model_variant = build_variant(cfg)
        config = TrainConfig(
            variant=model_variant,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            label_smooth=cfg.label_smooth,
            checkpoint_every=cfg.checkpoint_every,
            max_iterations=cfg.max_iterations,
        )
    except (ConfigError, ValueError) as e:
        fail(str(e), EXIT_BAD_INPUT)

    try:
        dataset = load_dataset(dataset_path)
    except (OSError, DatasetFormatError) as e:
        fail(f"cannot load dataset: {e}", EXIT_BAD_INPUT)

    try:
        train(dataset, config, checkpoint_path=out_path, metrics_path=default_metrics_path(out_path))
    except ContractError as e:
        fail(str(e), EXIT_MISMATCH)
    except (NonFiniteLossError, CheckpointError) as e:
        fail(f"training aborted: {e}", EXIT_TRAINING_ABORTED)
