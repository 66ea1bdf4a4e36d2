import numpy as np
import pytest
import torch

from bpcodec.errors import CorruptionError, ShapeError
from bpcodec.rvq import ResidualVQ, RVQConfig, bitrate

from .oracles import exhaustive_rvq, finite_difference_grad


def make_vq(books, **kw):
    books = torch.as_tensor(np.asarray(books), dtype=torch.float64)
    nq, k, d = books.shape
    vq = ResidualVQ(RVQConfig(num_stages=nq, codebook_size=k, dim=d, **kw)).double()
    vq.set_codebooks(books)
    return vq


def frames_to_features(frames):
    # (T, D) -> (1, D, T)
    return torch.as_tensor(np.asarray(frames), dtype=torch.float64).t()[None]


def test_worked_two_stage_example():
    vq = make_vq([[[0, 0], [1, 1]], [[0, 0], [0.25, -0.25]]])
    codes, e_hat, _ = vq.quantize(frames_to_features([[0.8, 0.7]]))
    assert codes[0, 0].tolist() == [1, 0]
    np.testing.assert_allclose(e_hat[0, :, 0].detach().numpy(), [1.0, 1.0])
    first_residual = np.array([0.8, 0.7]) - np.array([1.0, 1.0])
    assert np.sum(first_residual ** 2) == pytest.approx(0.13)
    ref_codes, ref_recon = exhaustive_rvq([[0.8, 0.7]], np.array([[[0, 0], [1, 1]], [[0, 0], [0.25, -0.25]]]))
    assert ref_codes.tolist() == [[1, 0]]


def test_exact_codeword_has_zero_commitment():
    vq = make_vq([[[0.3, -0.2, 0.5], [1.0, 1.0, 1.0]]])
    e = frames_to_features([[0.3, -0.2, 0.5]])
    codes, e_hat, commit = vq.quantize(e)
    assert codes.flatten().tolist() == [0]
    assert float(commit) == 0.0
    torch.testing.assert_close(e_hat, e)


@pytest.mark.parametrize("k,nq,seed", [(2, 1, 0), (8, 3, 1), (32, 4, 2), (17, 2, 3)])
def test_stage_choice_matches_exhaustive_search(k, nq, seed):
    rng = np.random.default_rng(seed)
    books = rng.normal(size=(nq, k, 6)) * np.array([1.0, 0.5, 0.25, 0.1])[:nq, None, None]
    frames = rng.normal(size=(64, 6))
    vq = make_vq(books)
    codes, e_hat, _ = vq.quantize(frames_to_features(frames))
    ref_codes, ref_recon = exhaustive_rvq(frames, books)
    np.testing.assert_array_equal(codes[0].numpy(), ref_codes)
    np.testing.assert_allclose(e_hat[0].detach().numpy().T, ref_recon, atol=1e-9)


def test_ties_break_to_lowest_index():
    vq = make_vq([[[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]])
    codes, _, _ = vq.quantize(frames_to_features([[1.0, 0.0], [0.0, 0.0]]))
    assert codes[0, :, 0].tolist() == [0, 0]


def test_dequantize_roundtrip_and_prefix():
    rng = np.random.default_rng(5)
    books = rng.normal(size=(4, 16, 3))
    vq = make_vq(books)
    e = frames_to_features(rng.normal(size=(20, 3)))
    codes, e_hat, _ = vq.quantize(e)
    torch.testing.assert_close(vq.dequantize(codes), e_hat.detach())
    for m in range(5):
        expected = sum((books[i][codes[0, :, i].numpy()] for i in range(m)), np.zeros((20, 3)))
        np.testing.assert_allclose(vq.dequantize(codes[..., :m])[0].numpy().T, expected, atol=1e-9)


def test_dequantize_zero_codes_and_random_codes():
    rng = np.random.default_rng(6)
    books = rng.normal(size=(3, 10, 4))
    vq = make_vq(books)
    zeros = torch.zeros(1, 5, 3, dtype=torch.long)
    np.testing.assert_allclose(vq.dequantize(zeros)[0, :, 0].numpy(), books[:, 0].sum(0))
    codes = torch.as_tensor(rng.integers(0, 10, size=(1, 7, 3)))
    loop = np.zeros((7, 4))
    for t in range(7):
        for i in range(3):
            loop[t] += books[i, int(codes[0, t, i])]
    np.testing.assert_allclose(vq.dequantize(codes)[0].numpy().T, loop, atol=1e-6)


def test_dequantize_rejects_bad_index():
    vq = make_vq(np.zeros((2, 4, 3)))
    with pytest.raises(CorruptionError):
        vq.dequantize(torch.tensor([[[0, 4]]]))


def test_quantize_dim_mismatch():
    vq = make_vq(np.zeros((1, 4, 3)))
    with pytest.raises(ShapeError):
        vq.quantize(torch.zeros(1, 2, 5, dtype=torch.float64))


def test_straight_through_gradient():
    rng = np.random.default_rng(7)
    vq = make_vq(rng.normal(size=(2, 8, 3)))
    e = frames_to_features(rng.normal(size=(5, 3))).requires_grad_(True)
    w = torch.as_tensor(rng.normal(size=(1, 3, 5)))

    def downstream(z):
        return (torch.sin(z) * w).sum() + (z ** 2).sum()

    _, e_hat, _ = vq.quantize(e)
    downstream(e_hat).backward()
    point = e_hat.detach().numpy().copy()
    fd = finite_difference_grad(lambda a: float(downstream(torch.from_numpy(a))), point)
    np.testing.assert_allclose(e.grad.numpy(), fd, atol=1e-6)


def test_commitment_gradient_pulls_toward_codeword():
    vq = make_vq([[[0.0, 0.0], [1.0, 1.0]]])
    e = frames_to_features([[0.8, 0.7]]).requires_grad_(True)
    _, _, commit = vq.quantize(e)
    commit.backward()
    np.testing.assert_allclose(e.grad[0, :, 0].numpy(), [2 * (0.8 - 1) / 2, 2 * (0.7 - 1) / 2])


def test_determinism():
    rng = np.random.default_rng(8)
    vq = make_vq(rng.normal(size=(3, 32, 4)))
    e = frames_to_features(rng.normal(size=(40, 4)))
    assert torch.equal(vq.quantize(e)[0], vq.quantize(e)[0])


# -- EMA -------------------------------------------------------------

def test_ema_gamma_one_keeps_books():
    rng = np.random.default_rng(9)
    books = rng.normal(size=(2, 8, 3))
    vq = make_vq(books, ema_decay=1.0)
    e = frames_to_features(rng.normal(size=(30, 3)))
    codes, _, _ = vq.quantize(e)
    assert vq.ema_update(e, codes) == 0
    np.testing.assert_allclose(vq.codebooks.numpy(), books, atol=1e-6)


def test_ema_locality():
    books = np.array([[[0.0, 0.0], [10.0, 10.0], [-10.0, 10.0], [10.0, -10.0]]])
    vq = make_vq(books, ema_decay=0.9, dead_code_threshold=0.0)
    frames = np.random.default_rng(10).normal(scale=0.1, size=(16, 2)) + 0.5
    e = frames_to_features(frames)
    codes, _, _ = vq.quantize(e)
    assert set(codes.flatten().tolist()) == {0}
    sums_before = vq.embed_sum.clone()
    sizes_before = vq.cluster_size.clone()
    vq.ema_update(e, codes)
    # only codeword 0 receives new mass; the others just decay
    torch.testing.assert_close(vq.cluster_size[0, 1:], 0.9 * sizes_before[0, 1:])
    torch.testing.assert_close(vq.embed_sum[0, 1:], 0.9 * sums_before[0, 1:])
    assert vq.cluster_size[0, 0] > 0.9 * sizes_before[0, 0]
    np.testing.assert_allclose(vq.codebooks[0, 1:].numpy(), books[0, 1:], rtol=1e-3)


def test_ema_converges_by_closed_form():
    gamma, eps, k = 0.8, 1e-5, 4
    books = np.array([[[0.0, 0.0], [10.0, 10.0], [-10.0, 10.0], [10.0, -10.0]]])
    vq = make_vq(books, ema_decay=gamma, dead_code_threshold=0.0, epsilon=eps)
    frames = np.random.default_rng(11).normal(scale=0.2, size=(12, 2)) + [0.6, -0.4]
    e = frames_to_features(frames)
    m, s = len(frames), frames.sum(0)

    cs = np.ones(k)  # initial counts
    n0 = cs.sum()
    smooth0 = (cs + eps) / (n0 + k * eps) * n0
    es = books[0] * smooth0[:, None]
    target = frames.mean(0)
    prev = np.linalg.norm(books[0, 0] - target)
    for step in range(1, 30):
        codes, _, _ = vq.quantize(e)
        vq.ema_update(e, codes)
        cs = gamma * cs + (1 - gamma) * np.array([m, 0, 0, 0])
        es = gamma * es
        es[0] += (1 - gamma) * s
        n = cs.sum()
        expected = es / ((cs + eps) / (n + k * eps) * n)[:, None]
        np.testing.assert_allclose(vq.codebooks[0].numpy(), expected, rtol=1e-9, atol=1e-9)
        dist = np.linalg.norm(expected[0] - target)
        assert dist < prev
        prev = dist
    assert prev < 0.01


def test_ema_reseeds_dead_codes():
    books = np.array([[[0.0, 0.0], [50.0, 50.0], [-50.0, 50.0]]])
    vq = make_vq(books, ema_decay=0.9, dead_code_threshold=2.0)
    frames = np.random.default_rng(12).normal(size=(20, 2))
    e = frames_to_features(frames)
    codes, _, _ = vq.quantize(e)
    n = vq.ema_update(e, codes, torch.Generator().manual_seed(0))
    assert n == 2
    new = vq.codebooks[0, 1:].numpy()
    assert all(any(np.allclose(c, f) for f in frames) for c in new)


def test_init_from_batch_samples_residuals():
    vq = ResidualVQ(RVQConfig(num_stages=2, codebook_size=8, dim=3)).double()
    e = torch.randn(2, 3, 10, dtype=torch.float64)
    vq.init_from_batch(e, torch.Generator().manual_seed(1))
    flat = e.transpose(1, 2).reshape(-1, 3)
    for c in vq.codebooks[0]:
        assert torch.isclose(flat, c).all(-1).any()
    assert bool(vq.initialized)


def test_more_stages_reduce_error_on_trained_books():
    rng = np.random.default_rng(13)
    vq = ResidualVQ(RVQConfig(num_stages=4, codebook_size=16, dim=4, ema_decay=0.9)).double()
    train = torch.as_tensor(rng.normal(size=(1, 4, 512)))
    gen = torch.Generator().manual_seed(0)
    vq.init_from_batch(train, gen)
    for _ in range(30):
        codes, _, _ = vq.quantize(train)
        vq.ema_update(train, codes, gen)
    held = torch.as_tensor(rng.normal(size=(1, 4, 256)))
    errors = []
    for m in range(5):
        _, e_hat, _ = vq.quantize(held, num_stages=m)
        errors.append(float(((held - e_hat) ** 2).mean()))
    assert all(b <= a for a, b in zip(errors, errors[1:])), errors


@pytest.mark.parametrize("nq,bps", [(2, 1000), (4, 2000), (6, 3000), (12, 6000), (0, 0)])
def test_bitrate_ladder(nq, bps):
    assert bitrate(RVQConfig(num_stages=nq)) == bps
