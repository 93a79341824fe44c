"""End-to-end acceptance gates.

Each test carries a ``criterion`` marker; conftest prints one PASS/FAIL line
per criterion at the end of the run. Criterion 6 trains all four families at
desk scale through the command line and takes roughly a quarter of an hour.
"""
import csv
import itertools

import numpy as np
import pytest

from attnbench import attention as A
from attnbench import cli
from attnbench import tensor as T
from attnbench.checkpoint import load_checkpoint
from attnbench.data import EOS, CopyDataset, TokenBatch
from attnbench.evaluation import SMOOTHING_EPS, bleu, evaluate
from attnbench.gradcheck import check_gradients
from attnbench.models import FAMILIES, GRUCell, LSTMCell, build, parameter_count, preset
from conftest import small_config

# frozen after the first calibration run (see README)
DESK_DATA = ["--synthetic", "--n", "2000", "--n-test", "200", "--vocab", "50", "--len", "3:10",
             "--seed", "7"]
DESK_SEED = "1"
GATES = {"transformer": 0.95, "conv_s2s": 0.90, "gru_bahdanau": 0.80}
LSTM_CEILING = 0.50
SHARED_VOCAB = 26214


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def U(rng, *shape):
    return rng.uniform(-1.5, 1.5, shape)


# ---------------------------------------------------------------------------
# 1. gradient correctness

OPS = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
    "mul": (lambda a, b: a * b, [(2, 3, 4), (3, 4)]),
    "div": (lambda a: a / 2.5, [(3, 4)]),
    "neg": (lambda a: -a, [(5,)]),
    "scale": (lambda a: T.scale(a, 0.37), [(2, 3)]),
    "matmul": (lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
    "batched_matmul": (lambda a, b: a @ b, [(2, 1, 3, 4), (3, 4, 2)]),
    "tanh": (T.tanh, [(3, 4)]),
    "sigmoid": (T.sigmoid, [(3, 4)]),
    "relu": (lambda a: T.relu(a + 0.05), [(3, 4)]),
    "exp": (T.exp, [(3, 4)]),
    "log": (lambda a: T.log(T.exp(a) + 1.0), [(3, 4)]),
    "reshape": (lambda a: T.reshape(a, (4, 3)), [(2, 6)]),
    "transpose": (lambda a: T.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    "swapaxes": (lambda a: T.swapaxes(a, 0, 2), [(2, 3, 4)]),
    "getitem": (lambda a: a[np.array([0, 2, 0]), 1:], [(3, 4)]),
    "concat": (lambda a, b: T.concat([a, b], axis=-1), [(2, 3), (2, 2)]),
    "stack": (lambda a, b: T.stack([a, b], axis=1), [(2, 3), (2, 3)]),
    "broadcast_to": (lambda a: T.broadcast_to(a, (4, 2, 3)), [(2, 1)]),
    "sum": (lambda a: T.tsum(a, axis=1, keepdims=True), [(3, 4)]),
    "mean": (lambda a: T.mean(a, axis=0), [(3, 4)]),
    "softmax": (lambda a: T.softmax(a, axis=-1), [(3, 5)]),
    "log_softmax": (lambda a: T.log_softmax(a, axis=-1), [(3, 5)]),
    "glu": (T.glu, [(3, 6)]),
    "layer_norm": (T.layer_norm, [(2, 3, 5), (5,), (5,)]),
    "conv1d": (lambda x, w, b: T.conv1d(x, w, b, 2, 0), [(2, 5, 3), (9, 4), (4,)]),
    "embedding": (lambda t: T.embedding(t, np.array([[1, 4, 1], [0, 2, 3]])), [(5, 3)]),
    "dropout": (lambda a: T.dropout(a, 0.4, True, np.random.default_rng(3)), [(4, 5)]),
    "cross_entropy": (lambda a: T.cross_entropy(a, np.array([2, 0, 4, 1]), ignore_id=0),
                      [(4, 6)]),
    "attend": (lambda v, s: A.attend(v, s).context, [(2, 4, 3), (2, 4)]),
    "scaled_dot_product": (lambda q, k, v: A.scaled_dot_product(q, k, v, A.causal_mask(4)).context,
                           [(2, 4, 3), (2, 4, 3), (2, 4, 2)]),
    "multi_head": (lambda x, a, b, c, d: A.multi_head(x, x, 2, a, b, c, d,
                                                      A.key_padding_mask([4, 2], 4)[:, None, None]),
                   [(2, 4, 4), (4, 4), (4, 4), (4, 4), (4, 3)]),
    "additive_score": (lambda s, h, a, b, c: A.additive_score(s, h, A.AdditiveScoreParams(a, b, c)),
                       [(2, 3), (2, 4, 5), (8, 6), (6,), (6, 1)]),
    "convs2s_attend": (lambda d, z, e: A.convs2s_attend(d, z, e).context,
                       [(2, 3, 4), (2, 5, 4), (2, 5, 4)]),
}


@criterion(1, "gradient correctness (ops and one decoder step per family)")
@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    params = {f"x{i}": T.Tensor(U(rng, *s), requires_grad=True) for i, s in enumerate(shapes)}
    out_shape = fn(*params.values()).shape
    w = T.Tensor(rng.standard_normal(out_shape))
    errs = check_gradients(lambda: T.tsum(fn(*params.values()) * w), params, eps=1e-5)
    assert max(errs.values()) < 1e-4, errs


@criterion(1, "gradient correctness (ops and one decoder step per family)")
@pytest.mark.parametrize("family", FAMILIES)
def test_decoder_step_gradients(family):
    rng = np.random.default_rng(11)
    m = build(small_config(family, vocab=9), rng)
    src = TokenBatch.from_sequences([[4, 7, 5], [8, 6]])
    tgt = TokenBatch.from_sequences([[], []])
    errs = check_gradients(lambda: T.cross_entropy(m.forward(src, tgt), tgt.ids),
                           dict(m.named_parameters()))
    # recurrent encoders unroll over the source, everything else is a single pass
    tol = 1e-3 if family in ("lstm_plain", "gru_bahdanau") else 1e-4
    assert max(errs.values()) < tol


@criterion(1, "gradient correctness (ops and one decoder step per family)")
@pytest.mark.parametrize("cell_cls", [LSTMCell, GRUCell])
def test_recurrent_unroll_gradients(cell_cls):
    rng = np.random.default_rng(12)
    cell = cell_cls(3, 4, rng, np.float64)
    xs = U(rng, 6, 2, 3)
    w = rng.standard_normal((2, 4))

    def loss():
        h = c = T.Tensor(np.zeros((2, 4)))
        for x in xs:
            if cell_cls is LSTMCell:
                h, c = cell(T.Tensor(x), (h, c))
            else:
                h = cell(T.Tensor(x), h)
        return T.tsum(h * T.Tensor(w))

    assert max(check_gradients(loss, dict(cell.named_parameters())).values()) < 1e-3


# ---------------------------------------------------------------------------
# 2. attention invariants

def _masked_instance(rng, b=3, n=4, m=6):
    lengths = np.array([6, 2, 4])
    q, k, v = U(rng, b, n, 5), U(rng, b, m, 5), U(rng, b, m, 3)
    return q, k, v, lengths, A.key_padding_mask(lengths, m)[:, None, :]


@criterion(2, "attention invariant suite")
def test_attention_invariants():
    rng = np.random.default_rng(21)
    for _ in range(20):
        q, k, v, lengths, mask = _masked_instance(rng)
        res = A.scaled_dot_product(T.Tensor(q), T.Tensor(k), T.Tensor(v), mask)
        w = res.weights.data
        assert np.abs(w.sum(-1) - 1).max() < 1e-6
        for b, n in enumerate(lengths):
            assert (w[b, :, n:] == 0.0).all()
        v2 = v.copy()
        for b, n in enumerate(lengths):
            v2[b, n:] = rng.standard_normal(v2[b, n:].shape) * 1e3
        res2 = A.scaled_dot_product(T.Tensor(q), T.Tensor(k), T.Tensor(v2), mask)
        assert np.array_equal(res.context.data, res2.context.data)

        scores = U(rng, 2, 6) * 10
        vals = T.Tensor(U(rng, 2, 6, 3))
        base = A.attend(vals, T.Tensor(scores)).context.data
        shifted = A.attend(vals, T.Tensor(scores + rng.uniform(-50, 50, (2, 1)))).context.data
        assert np.abs(base - shifted).max() < 1e-12

    x, kv = U(rng, 2, 4, 4), U(rng, 2, 5, 4)
    wq, wk, wv = (U(rng, 4, 4) for _ in range(3))
    got = A.multi_head(T.Tensor(x), T.Tensor(kv), 1, T.Tensor(wq), T.Tensor(wk), T.Tensor(wv),
                       T.Tensor(np.eye(4))).data
    want = A.scaled_dot_product(T.Tensor(x @ wq), T.Tensor(kv @ wk), T.Tensor(kv @ wv)).context.data
    assert np.abs(got - want).max() < 1e-10

    h = U(rng, 3, 7, 4)
    assert np.array_equal(A.last_element_attention(T.Tensor(h)).context.data, h[:, -1])
    got = A.last_element_attention(T.Tensor(h), lengths=[7, 1, 3]).context.data
    assert np.array_equal(got, h[[0, 1, 2], [6, 0, 2]])


# ---------------------------------------------------------------------------
# 3. causality

@criterion(3, "decoder causality (transformer, conv)")
@pytest.mark.parametrize("family", ["transformer", "conv_s2s"])
def test_causality(family):
    rng = np.random.default_rng(31)
    m = build(preset(family, "desk", 50), rng).eval()
    for _ in range(3):
        src = TokenBatch.from_sequences([list(rng.integers(4, 50, n)) for n in (9, 4, 6)])
        tgt = TokenBatch.from_sequences([list(rng.integers(4, 50, 10)) for _ in range(3)])
        base = m.forward(src, tgt).data
        for t in range(tgt.max_len):
            ids = tgt.ids.copy()
            ids[:, t + 1:] = rng.integers(4, 50, ids[:, t + 1:].shape)
            pert = m.forward(src, TokenBatch(ids, tgt.lengths)).data
            assert np.array_equal(pert[:, :t + 1], base[:, :t + 1])


# ---------------------------------------------------------------------------
# 4. loop oracles

def _softmax(s):
    z = np.exp(s - s.max())
    return z / z.sum()


@criterion(4, "Bahdanau and ConvS2S loop oracles")
def test_bahdanau_oracle():
    rng = np.random.default_rng(41)
    m = build(small_config("gru_bahdanau"), rng)
    src = TokenBatch.from_sequences([list(rng.integers(4, 13, n)) for n in (5, 3, 4)])
    trace = []
    m.forward(src, src, trace=trace)
    h_enc = m.encode(src).states.data
    w_in, b_in, w_out = m.attn_in.w.data, m.attn_in.b.data, m.attn_out.w.data[:, 0]
    for step in trace:
        for b, n in enumerate(src.lengths):
            s = step["s_prev"][b]
            e = np.array([w_out @ np.tanh(np.concatenate([s, h_enc[b, j]]) @ w_in + b_in)
                          for j in range(n)])
            alpha = _softmax(e)
            c = sum(alpha[j] * h_enc[b, j] for j in range(n))
            assert np.abs(step["context"][b] - c).max() < 1e-6


@criterion(4, "Bahdanau and ConvS2S loop oracles")
def test_convs2s_oracle():
    rng = np.random.default_rng(42)
    m = build(small_config("conv_s2s", n_layers=3), rng)
    src = TokenBatch.from_sequences([list(rng.integers(4, 13, n)) for n in (5, 3, 4)])
    trace = []
    m.forward(src, src, trace=trace)
    enc = m.encode(src)
    z, e = enc.z.data, enc.e.data
    assert len(trace) == 3
    for step in trace:
        proj = m.attn_in[step["layer"]]
        for b, n in enumerate(src.lengths):
            for i in range(src.max_len):
                d = proj.w.data.T @ step["h"][b, i] + proj.b.data + step["g"][b, i]
                a = _softmax(np.array([d @ z[b, j] for j in range(n)]))
                c = sum(a[j] * (z[b, j] + e[b, j]) for j in range(n))
                assert np.abs(step["context"][b, i] - c).max() < 1e-6


# ---------------------------------------------------------------------------
# 5. BLEU contract

@criterion(5, "BLEU contract")
def test_bleu_contract():
    rng = np.random.default_rng(51)
    for n in range(1, 12):
        seq = list(rng.integers(4, 50, n))
        assert bleu(seq, seq) == 1.0
        # disjoint: every order sits on the smoothing floor eps / count
        order = min(4, n)
        floor = np.exp(np.mean([np.log(SMOOTHING_EPS / (n - k)) for k in range(order)]))
        other = list(rng.integers(60, 100, n))
        assert abs(bleu(seq, other) - floor) < 1e-12 and bleu(seq, other) <= SMOOTHING_EPS + 1e-15
        for k1, k2 in itertools.product(range(6), repeat=2):
            assert bleu(seq + [EOS] * k1, seq + [EOS] * k2) == 1.0
    for _ in range(50):
        cand = list(rng.integers(4, 9, rng.integers(1, 9)))
        ref = list(rng.integers(4, 9, rng.integers(1, 9)))
        base = bleu(cand, ref)
        for k1, k2 in itertools.product(range(6), repeat=2):
            assert bleu(cand + [EOS] * k1, ref + [EOS] * k2) == base


# ---------------------------------------------------------------------------
# 6 and 9. desk-scale comparison through the command line

@pytest.fixture(scope="module")
def desk_compare(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    data, out = root / "data", root / "compare"
    assert cli.main(["gen-data", "-q", *DESK_DATA, "--out", str(data)]) == 0
    code = cli.main(["compare", "-q", "--seed", DESK_SEED, "--scale", "desk",
                     "--data", str(data), "--out", str(out)])
    with (out / "summary.csv").open() as fh:
        rows = {r["model"]: r for r in csv.DictReader(fh)}
    return code, rows, data, out


@pytest.mark.slow
@criterion(6, "desk-scale comparison: BLEU gates and convergence ordering")
def test_desk_bleu_gates(desk_compare):
    code, rows, _, _ = desk_compare
    assert code == 0
    assert list(rows) == list(FAMILIES)
    bleus = {m: float(r["bleu"]) for m, r in rows.items()}
    print("desk BLEU", bleus)
    for model, gate in GATES.items():
        assert bleus[model] >= gate, (model, bleus[model])
    assert bleus["lstm_plain"] <= LSTM_CEILING


@pytest.mark.slow
@criterion(6, "desk-scale comparison: BLEU gates and convergence ordering")
def test_desk_transformer_converges_first(desk_compare):
    _, rows, _, _ = desk_compare
    epochs = {m: int(r["epochs_to_converge"]) for m, r in rows.items()}
    print("desk epochs to converge", epochs)
    others = [epochs[m] for m in FAMILIES if m != "transformer"]
    assert epochs["transformer"] < min(others), epochs


@pytest.mark.slow
@criterion(9, "checkpoint round-trip reproduces logged avg_bleu")
@pytest.mark.parametrize("family", FAMILIES)
def test_checkpoint_round_trip(desk_compare, family):
    _, _, data, out = desk_compare
    model, meta = load_checkpoint(out / family / "best.ckpt")
    ds, vocab = CopyDataset.load(data)
    report = evaluate(model, ds, vocab)
    assert abs(report.avg_bleu - meta["avg_bleu"]) <= 1e-9


# ---------------------------------------------------------------------------
# 7. parameter-count ordering

@criterion(7, "paper-scale parameter-count ordering")
def test_paper_parameter_ordering():
    counts = {}
    for family in FAMILIES:
        m = build(preset(family, "paper", SHARED_VOCAB), np.random.default_rng(0),
                  dtype=np.float32)
        counts[family] = parameter_count(m)
        del m
    print("paper-scale parameters", counts)
    assert (counts["transformer"] > counts["gru_bahdanau"] > counts["conv_s2s"]
            > counts["lstm_plain"])


# ---------------------------------------------------------------------------
# 8. determinism

def _without_timing(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    drop = rows[0].index("epoch_sec")
    return [[c for i, c in enumerate(r) if i != drop] for r in rows]


@criterion(8, "bit-identical reruns")
def test_rerun_is_bit_identical(tmp_path):
    outputs = []
    for rep in ("a", "b"):
        root = tmp_path / rep
        data = root / "data"
        assert cli.main(["gen-data", "-q", "--synthetic", "--n", "300", "--n-test", "40",
                         "--vocab", "50", "--len", "3:10", "--seed", "7", "--out", str(data)]) == 0
        for family in FAMILIES:
            assert cli.main(["train", "-q", "--model", family, "--seed", "3", "--epochs", "2",
                             "--data", str(data), "--out", str(root / family)]) == 0
        outputs.append(root)
    a, b = outputs
    for name in ("train.txt", "test.txt"):
        assert (a / "data" / name).read_bytes() == (b / "data" / name).read_bytes()
    for family in FAMILIES:
        assert _without_timing(a / family / "metrics.csv") == _without_timing(b / family / "metrics.csv")
        assert (a / family / "best.ckpt").read_bytes() == (b / family / "best.ckpt").read_bytes()
