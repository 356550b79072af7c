import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdenoise.cli import SpecError, format_measure, main, parse_grid, parse_measure
from msdenoise.measures import MixtureMeasure, UniformMeasure


def test_parse_two_point():
    m = parse_measure("mix:0.5@-1@0,0.5@1@0")
    assert isinstance(m, MixtureMeasure)
    assert [tuple(map(float, c)) for c in m.components] == [(0.5, -1.0, 0.0), (0.5, 1.0, 0.0)]


def test_parse_uniform():
    m = parse_measure("unif:-1,1")
    assert isinstance(m, UniformMeasure) and (m.lower, m.upper) == (-1.0, 1.0)


@pytest.mark.parametrize("spec, msg", [
    ("mix:0.6@0@1", "weights sum to 0.6"),
    ("mix:0.5@0@1,0.5@1x@1", "malformed mean '1x' at position 16"),
    ("mix:1@0@-2", "negative variance '-2' at position 8"),
    ("mix:1@0", "not w@mean@var"),
    ("unif:1,1", "a < b"),
    ("unif:0,zz", "malformed upper bound 'zz' at position 7"),
    ("gauss:0,1", "unknown measure family 'gauss'"),
    ("0.5@1@0", "lacks a 'mix:' or 'unif:' prefix"),
])
def test_parse_errors_name_token_and_position(spec, msg):
    with pytest.raises(SpecError, match=msg):
        parse_measure(spec)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def mixtures(draw):
    k = draw(st.integers(1, 4))
    raw = draw(st.lists(st.integers(1, 50), min_size=k, max_size=k))
    w = [r / sum(raw) for r in raw]
    w[-1] = 1.0 - math.fsum(w[:-1])
    comps = [(wi, draw(finite), draw(st.floats(0, 1e3))) for wi in w]
    return MixtureMeasure.from_components(comps)


@given(mixtures())
@settings(max_examples=200, deadline=None)
def test_mixture_round_trip(m):
    back = parse_measure(format_measure(m))
    np.testing.assert_array_equal(np.asarray(back.components), np.asarray(m.components))


@given(finite, st.floats(1e-6, 1e3))
@settings(max_examples=200, deadline=None)
def test_uniform_round_trip(a, width):
    b = a + width
    if not a < b:
        return
    back = parse_measure(format_measure(UniformMeasure(a, b)))
    assert (back.lower, back.upper) == (a, b)


def test_grids():
    np.testing.assert_allclose(parse_grid("0.05:3:0.05"), np.arange(1, 61) * 0.05)
    assert len(parse_grid("0.02:2:0.02")) == 100
    g = parse_grid("1,2,inf")
    assert list(g[:2]) == [1.0, 2.0] and math.isinf(g[2])
    assert list(parse_grid("0:1:0.5")) == [0.0, 0.5, 1.0]


# -- command runs -----------------------------------------------------------------


SURVIVAL = ["survival", "--measure", "mix:0.5@-1@0,0.5@1@0", "--snr", "1.5",
            "--samples", "100000", "--seed", "7"]


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], lines[1].split(","), np.array([[float(v) for v in ln.split(",")]
                                                   for ln in lines[2:]])


def test_survival_csv_is_byte_identical_and_self_describing(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(SURVIVAL + ["--out", str(a)]) == 0
    assert main(SURVIVAL + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    meta, header, data = read_csv(a)
    assert meta.startswith("# seed=7, n=100000, spec=mix:0.5@-1@0,0.5@1@0")
    assert header == ["u", "s"]
    s1 = data[np.isclose(data[:, 0], 1.0), 1][0]
    assert s1 == pytest.approx(0.18, abs=0.02)


def test_different_seed_changes_output(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(SURVIVAL + ["--out", str(a)])
    main(SURVIVAL[:-1] + ["8", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


def test_survival_json_and_bands(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert main(SURVIVAL + ["--format", "json", "--bands", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["metadata"]["seed"] == 7
    assert set(doc["rows"][0]) == {"u", "s", "s_lo", "s_hi"}
    assert "wrote" in capsys.readouterr().out


def test_complexity_and_zeta(tmp_path):
    c = tmp_path / "c.csv"
    assert main(["complexity", "--measure", "unif:-1,1", "--snr-grid", "0.5:1.5:0.5",
                 "--samples", "10000", "--out", str(c)]) == 0
    _, header, data = read_csv(c)
    assert header == ["r", "m_star", "delta_star"] and data.shape == (3, 3)
    assert np.all(data[:, 1] == 0)
    z = tmp_path / "z.csv"
    assert main(["zeta", "--measure", "mix:1@0@0", "--t-grid", "0.5,1", "--M-list", "1,inf",
                 "--samples", "10000", "--out", str(z)]) == 0
    _, header, data = read_csv(z)
    assert header == ["t", "r", "M", "zeta_star"] and data.shape == (4, 4)
    np.testing.assert_allclose(data[:, 3], 1 / (1 - np.exp(-2 * data[:, 0])), rtol=1e-5)


def test_simulate_writes_chain_and_ensembles(tmp_path):
    out = tmp_path / "run"
    args = ["simulate", "--mu", "mix:0.5@-1@0,0.5@1@0", "--nu", "mix:1@0@0", "--steps", "20",
            "--eta", "0.05", "--particles", "2000", "--seed", "7", "--out", str(out)]
    assert main(args) == 0
    for name in ("chain", "mu0", "nu0", "start", "recovered", "roundtrip"):
        assert (out / f"{name}.csv").exists()
    _, header, data = read_csv(out / "chain.csv")
    assert header == ["k", "t", "w2_forward", "w2_backward"] and data.shape == (21, 4)
    _, _, rec = read_csv(out / "recovered.csv")
    assert rec.shape == (2000, 1)
    doc = json.loads((out / "report.json").read_text())
    assert {"config", "rows", "roundtrip_residual", "realized_M"} <= set(doc)
    first = (out / "chain.csv").read_bytes()
    assert main(args) == 0
    assert (out / "chain.csv").read_bytes() == first


@pytest.mark.parametrize("argv", [
    ["survival", "--measure", "mix:0.6@0@1", "--snr", "1"],
    ["survival", "--measure", "unif:-1,1", "--snr", "1", "--samples", "1.5"],
    ["survival", "--measure", "unif:-1,1", "--snr", "abc"],
    ["survival", "--measure", "unif:-1,1", "--sn", "1"],
    ["survival", "--measure", "unif:-1,1", "--snr", "1", "--seed", "-3"],
    ["simulate", "--mu", "unif:-1,1", "--nu", "unif:-1,1", "--steps", "0", "--out", "x"],
    ["nonsense"],
])
def test_bad_arguments_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_module_errors_exit_1(tmp_path, capsys):
    # too few samples is rejected by the complexity module, not the parser
    assert main(["survival", "--measure", "unif:-1,1", "--snr", "1", "--samples", "10"]) == 1
    assert "error" in capsys.readouterr().err
    # step size above the cap
    assert main(["simulate", "--mu", "unif:-1,1", "--nu", "mix:1@0@0", "--eta", "0.5",
                 "--out", str(tmp_path / "r")]) == 1
    # unwritable output path
    assert main(SURVIVAL[:6] + ["10000", "--out", str(tmp_path / "missing" / "s.csv")]) == 1


def test_verify_exit_status(capsys):
    assert main(["verify", "--criteria", "5"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and out.rstrip().endswith("0 fail")
    assert main(["verify", "--criteria", "99"]) == 1
