import os

# single-threaded BLAS keeps tiny-matrix runs fast and bit-reproducible;
# must be set before numpy is first imported
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from types import SimpleNamespace

import pytest

from phasedcn.data import plan_corpus, synth_corpus
from phasedcn.dsp import load_wav


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Deterministic 20-clean + 3-noise synthetic corpus with mixture plan."""
    root = tmp_path_factory.mktemp("corpus")
    clean, noise = synth_corpus(root, 20, 3, seed=0)
    noise_lengths = {p: len(load_wav(root / p)) for p in noise}
    records = plan_corpus(
        {"train": clean[:16], "val": clean[16:18], "test": clean[18:]},
        noise, [], noise_lengths,
        snr_range=(-5.0, 15.0), test_snrs=(0,),
        mixes_per_train=3, mixes_per_val=2, seed=0,
    )
    return SimpleNamespace(root=root, clean=clean, noise=noise, records=records,
                           noise_lengths=noise_lengths)
