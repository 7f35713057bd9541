import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def make_palette(num_classes):
    """(C, 3) uint8 colours: the bits of k + 1 are dealt round-robin to the
    channels from the high bit down, so consecutive ids land far apart."""
    labels = np.arange(1, num_classes + 1)
    palette = np.zeros((num_classes, 3), dtype=np.int64)
    bit = 7
    while labels.any():
        for channel in range(3):
            palette[:, channel] |= ((labels >> channel) & 1) << bit
        labels = labels >> 3
        bit -= 1
    return palette.astype(np.uint8)


def plot_precision_curves(report, filename):
    """One precision@k curve per relevance predicate."""
    plt.figure(figsize=(5, 4))
    for name, curve in report.curves.items():
        plt.plot(np.arange(1, len(curve) + 1), curve, label=name)
    plt.xlabel("k")
    plt.ylabel("precision@k")
    plt.ylim(0.0, 1.02)
    plt.legend()
    plt.tight_layout()
    plt.savefig(filename)
    plt.close()
    return filename


def plot_pca(projection, coarse, filename):
    coarse = np.asarray(coarse, dtype=np.int64)
    colours = make_palette(int(coarse.max()) + 1) / 255.0
    plt.figure(figsize=(5, 5))
    plt.scatter(projection[:, 0], projection[:, 1], c=colours[coarse], s=8)
    plt.xlabel("pc1")
    plt.ylabel("pc2")
    plt.tight_layout()
    plt.savefig(filename)
    plt.close()
    return filename


def plot_convergence(epoch_logs, filename):
    epochs = [log.epoch + 1 for log in epoch_logs]
    plt.figure(figsize=(5, 4))
    plt.plot(epochs, [log.combined_loss for log in epoch_logs], label="combined")
    plt.plot(epochs, [log.softmax_loss for log in epoch_logs], label="softmax")
    plt.plot(epochs, [log.triplet_loss for log in epoch_logs], label="triplet")
    plt.xlabel("epoch")
    plt.ylabel("loss")
    plt.legend()
    plt.tight_layout()
    plt.savefig(filename)
    plt.close()
    return filename
