"""Short-to-long preference optimization laboratory.

Submodules:

* :mod:`shortlong.links` — convex links and their margin envelopes
* :mod:`shortlong.losses` — preference losses with the reward-consistency term
* :mod:`shortlong.bounds` — numerical certification of the decomposition bounds
* :mod:`shortlong.policy` — the tiny differentiable autoregressive scorer
* :mod:`shortlong.corpus` / :mod:`shortlong.forge` — synthetic haystack data
* :mod:`shortlong.training` — deterministic training loop and evaluation
* :mod:`shortlong.efficiency` — analytic cost model and speedup analysis
* :mod:`shortlong.cli` — reproducible command-line runs
"""

__version__ = "0.1.0"
