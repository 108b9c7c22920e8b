"""Model dimensions and parameter initialization."""
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, get_dtype

N_RATINGS = 5
N_CLASSES = 3


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    emb_dim: int = 300
    d_h: int = 256
    d_a: int = 256
    init_scale: float = 0.05

    def __post_init__(self):
        if self.d_h % 2:
            raise ValueError("d_h must be even (two encoder directions of d_h/2)")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must include the four special ids")

    @property
    def d_m(self):
        return 2 * self.d_h + N_RATINGS

    def to_dict(self):
        return asdict(self)


def param_shapes(cfg):
    """Name -> shape for every parameter. Weight matrices are stored input x output."""
    V, E, d, da, dm = cfg.vocab_size, cfg.emb_dim, cfg.d_h, cfg.d_a, cfg.d_m
    half = d // 2
    shapes = {
        "embedding": (V, E),
        # bidirectional encoder, shared by question and reviews
        "enc.fw.Wx": (E, 4 * half), "enc.fw.Wh": (half, 4 * half), "enc.fw.b": (4 * half,),
        "enc.bw.Wx": (E, 4 * half), "enc.bw.Wh": (half, 4 * half), "enc.bw.b": (4 * half,),
        "coatt.U": (d, d),
        # review-level opinion attention and classifier
        "opinion.W_m": (dm, da), "opinion.w_m": (da,),
        "opinion.W_s": (dm, N_CLASSES), "opinion.b_s": (N_CLASSES,),
        # decoder initial state from the opinion memory
        "dec.init_h.W": (dm, d), "dec.init_h.b": (d,),
        "dec.init_c.W": (dm, d), "dec.init_c.b": (d,),
        "dec.lstm.Wx": (E, 4 * d), "dec.lstm.Wh": (d, 4 * d), "dec.lstm.b": (4 * d,),
    }
    for view in ("q", "r"):
        shapes.update({
            f"dec.att_{view}.W_pi": (d, d), f"dec.att_{view}.W_s": (d, d),
            f"dec.att_{view}.b": (d,), f"dec.att_{view}.w": (d,),
        })
    shapes.update({
        "dec.att_o.W_o": (dm, d), "dec.att_o.W_s": (d, d),
        "dec.att_o.b": (d,), "dec.att_o.w": (d,),
        "dec.out.W1": (3 * d, d), "dec.out.b1": (d,),
        "dec.out.W2": (d, V), "dec.out.b2": (V,),
        "dec.gamma.W": (3 * d, 3), "dec.gamma.b": (3,),
    })
    return shapes


def _is_bias(name):
    last = name.rsplit(".", 1)[-1]
    return last.startswith("b")


def init_params(cfg, rng):
    """Weights ~ U(-init_scale, init_scale), biases zero. Draw order is fixed by name."""
    dtype = get_dtype()
    params = {}
    for name, shape in param_shapes(cfg).items():
        if _is_bias(name):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def params_from_arrays(arrays, cfg):
    expected = param_shapes(cfg)
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise ValueError(f"checkpoint/config mismatch: missing={missing} unexpected={extra}")
    params = {}
    for name, shape in expected.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(shape):
            raise ValueError(f"checkpoint/config dimension mismatch for {name}: "
                             f"{tuple(arr.shape)} vs {tuple(shape)}")
        params[name] = Tensor(arr.astype(get_dtype()), requires_grad=True, name=name)
    return params


def load_embeddings(path, vocab, params):
    """Overwrite embedding rows from a text file of ``token v1 ... vE`` lines.

    Returns the number of vocabulary tokens found in the file.
    """
    table = params["embedding"].data
    dim = table.shape[1]
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise ValueError(f"{path}: line {lineno} has {len(parts) - 1} values, expected {dim}")
            tok = parts[0]
            if tok in vocab.stoi:
                table[vocab.stoi[tok]] = np.asarray(parts[1:], dtype=table.dtype)
                hits += 1
    return hits
