import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from plot import savefig

logger = logging.getLogger(__name__)


class LossRecord:
    """ Per-epoch loss values of one training run. """

    def __init__(self, labels = None, name = "loss"):
        self.data = []
        self.name = name
        self.labels = labels if labels is not None else ["loss"]

    def record(self, count, losses):
        self.data.append((count, list(losses)))

    def means(self, index = 0) -> list:
        return [losses[index] for _, losses in self.data]

    def print_recent(self):
        if len(self.data) > 0:
            count, losses = self.data[-1]
            logger.info(
                "%s epoch %d: %s", self.name, count, ", ".join(
                    "{} {:.6f}".format(label, loss)
                    for label, loss in zip(self.labels, losses)
                ),
            )

    def plot(self, path):
        fig = plt.figure(figsize = [6, 5])
        ax = fig.add_subplot(111)
        ax.set_yscale("log")
        for i in range(len(self.labels)):
            ax.plot(
                [s[0] for s in self.data],
                [s[1][i] for s in self.data],
                label = self.labels[i]
            )
        ax.set_xlabel("epoch")
        ax.legend()

        savefig(path, fig)
        plt.close(fig)
