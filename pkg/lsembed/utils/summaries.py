import json
import os

from tensorboardX import SummaryWriter


class TensorboardSummary:
    def __init__(self, directory):
        self.directory = directory

    def create_summary(self):
        writer = SummaryWriter(os.path.join(self.directory, "tb"))
        return writer

    def log_epoch(self, writer, epoch_log):
        writer.add_scalar("train/combined_loss", epoch_log.combined_loss, epoch_log.epoch)
        writer.add_scalar("train/softmax_loss", epoch_log.softmax_loss, epoch_log.epoch)
        writer.add_scalar("train/triplet_loss", epoch_log.triplet_loss, epoch_log.epoch)
        writer.add_scalar("train/accuracy", epoch_log.accuracy, epoch_log.epoch)
        writer.add_scalar("train/seconds", epoch_log.seconds, epoch_log.epoch)


class JsonLinesLog:
    """Append-only JSON-lines file, truncated when opened."""

    def __init__(self, filename):
        self.filename = filename
        open(self.filename, "w").close()

    def write(self, record):
        with open(self.filename, "a") as f:
            f.write(json.dumps(record) + "\n")
