import csv
import io

import pytest

from periso import experiments_cli as cli
from periso.periodic_sets import make_trig_sum


def _rows(text):
    lines = text.splitlines()
    assert lines[0].startswith(cli.CSV_VERSION)
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def test_parse_config_and_comments():
    cfg = cli.parse_config(
        """
        # sweep
        experiment = perimeter_sweep
        dimension = 3
        family = perturbed:A ; perturbed:B:+1,-1,+1   # two families
        t_values = 0, 0.1, 0.2
        resolution = 32
        samples = 1e6
        """
    )
    assert cfg.dimension == 3
    assert cfg.families == ("perturbed:A", "perturbed:B:+1,-1,+1")
    assert cfg.t_values == (0.0, 0.1, 0.2)
    assert cfg.samples == 1_000_000


def test_digest_ignores_output_path():
    a = cli.parse_config("experiment = kernel_cert", output_path="x.txt")
    b = cli.parse_config("experiment = kernel_cert")
    c = cli.parse_config("experiment = kernel_cert\nseed = 4")
    assert a.digest() == b.digest() != c.digest()
    assert len(a.digest()) == 12


@pytest.mark.parametrize(
    "text",
    [
        "dimension = 2",
        "experiment = nope",
        "experiment = perimeter_sweep\ndimension = 4",
        "experiment = perimeter_sweep\nbogus = 1",
        "experiment = perimeter_sweep\nresolution = 12.5",
        "experiment = perimeter_sweep\nfamily = sphere",
        "experiment = perimeter_sweep\nt_values = 2",
        "experiment = stability_sweep\nvariant = brownian",
        "experiment = perimeter_sweep\nfamily = perturbed:B:0.1:+1,+1,+1",
        "experiment = kernel_cert\nmissing equals",
    ],
)
def test_bad_configs_raise(text):
    with pytest.raises(cli.ConfigError):
        cli.parse_config(text)


def test_cli_exit_code_two_on_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("experiment = perimeter_sweep\ndimension = 7\n")
    assert cli.main(["perimeter_sweep", "--config", str(cfg)]) == 2
    assert "dimension" in capsys.readouterr().err
    assert cli.main(["perimeter_sweep", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_cli_subcommand_must_match_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("experiment = kernel_cert\n")
    assert cli.main(["kernel_cert", "--config", str(cfg)]) == 0
    assert cli.main(["perimeter_sweep", "--config", str(cfg)]) == 2


def test_symmetry_failure_aborts(monkeypatch, capsys):
    good = make_trig_sum([(1.0, (1, 1))])
    broken = type(good)(2, lambda x: good.evaluate(x) + 0.5, good.gradient, "broken")
    monkeypatch.setattr(cli, "parse_family", lambda *a, **k: broken)
    assert cli.main(["perimeter_sweep", "--resolution", "32"]) == 2
    assert "not periodized" in capsys.readouterr().err


def test_kernel_cert_report():
    text, ok = cli.run_kernel_cert(cli.parse_config("experiment = kernel_cert"))
    assert ok
    assert [line.split()[0] for line in text.splitlines()[1:]] == ["PASS"] * 4


def test_kernel_cert_can_fail():
    # the K = 0 kernel is identically 1, so p_1 is off by the full deviation
    # in the two-form comparison
    text, ok = cli.run_kernel_cert(cli.parse_config("experiment = kernel_cert\ntruncation_order = 0"))
    assert not ok
    assert "FAIL poisson_two_form" in text


def test_perimeter_sweep_rows_and_quoting():
    cfg = cli.parse_config(
        "experiment = perimeter_sweep\nfamily = halfspace:+1,-1; perturbed:C:-1,+1\nt_values = 0.2,0.4\nresolution = 64"
    )
    text, ok = cli.run_perimeter_sweep(cfg)
    rows = _rows(text)
    assert ok
    assert [r["family"] for r in rows] == ["halfspace:+1,-1", "perturbed:C:-1,+1", "perturbed:C:-1,+1"]
    assert float(rows[0]["robustness"]) < 1e-12
    assert all(r["config_hash"] == cfg.digest() for r in rows)


def test_stability_sweep_columns():
    cfg = cli.parse_config(
        "experiment = stability_sweep\nfamily = perturbed:B\nt_values = 0.4\nvalues = 0.9, 0.99\nsamples = 100000\nresolution = 64"
    )
    text, ok = cli.run_stability_sweep(cfg)
    rows = _rows(text)
    assert ok and len(rows) == 2
    assert float(rows[0]["oracle"]) == pytest.approx(0.2781492812958858, abs=1e-14)


def test_cli_writes_out_file_byte_identically(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(
        "experiment = stability_sweep\nfamily = perturbed:A:0.3\nvalues = 0.05\nvariant = uniform_heat\n"
        "samples = 50000\nresolution = 64\nseed = 9\n"
    )
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        assert cli.main(["stability_sweep", "--config", str(cfg), "--out", str(out)]) in (0, 1)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert cli.main(["stability_sweep", "--config", str(cfg), "--seed", "10", "--out", str(tmp_path / "c.csv")]) in (0, 1)
    assert (tmp_path / "c.csv").read_bytes() != outs[0]


def test_module_entry_point(capsys):
    assert cli.main(["kernel_cert"]) == 0
    assert capsys.readouterr().out.startswith("# periso kernel_cert")
