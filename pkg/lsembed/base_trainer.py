import time

from tqdm import tqdm


class BaseTrainer:
    """Epoch loop shared by the trainers.

    Subclasses provide ``batches(epoch)``, ``train_step(batch, epoch, step)``
    and ``make_epoch_log(...)``.
    """

    quiet = False

    def training(self, epoch):
        start = time.perf_counter()
        totals = {"combined": 0.0, "softmax": 0.0, "triplet": 0.0, "correct": 0, "seen": 0}
        steps = 0
        tbar = tqdm(self.batches(epoch), disable=self.quiet, leave=False)
        for i, batch in enumerate(tbar):
            result = self.train_step(batch, epoch, i)
            size = len(batch)
            totals["combined"] += result.value * size
            totals["softmax"] += result.e_s * size
            totals["triplet"] += result.e_t * size
            totals["correct"] += result.correct
            totals["seen"] += size
            steps += 1
            tbar.set_description("Train loss: %.3f" % (totals["combined"] / totals["seen"]))
        seconds = time.perf_counter() - start
        epoch_log = self.make_epoch_log(epoch, totals, steps, seconds)
        if self.writer is not None:
            self.summary.log_epoch(self.writer, epoch_log)
        return epoch_log
