import pytest

from rgat.config import DATASET_PRESETS, RunConfig, load_config, parse_config
from rgat.layer import ConfigError


def test_parse_sections_types_and_comments(tmp_path):
    (tmp_path / "t.txt").write_text("")
    text = """
    # a run
    [data]
    train_path = t.txt
    [model]
    channels = 2   # inline comment
    dim = 16
    qatt_enabled = no
    d_q =
    lr = 0.01
    """
    cfg = parse_config(text.replace("\n    ", "\n"), tmp_path)
    assert cfg.channels == 2 and cfg.dim == 16 and cfg.qatt_enabled is False
    assert cfg.d_q is None and cfg.lr == 0.01
    assert cfg.train_path == str(tmp_path / "t.txt")
    cfg.validate_paths()


@pytest.mark.parametrize("text", [
    "[a]\nbogus = 1\n",
    "[a]\nchannels = 2\n[b]\nchannels = 4\n",
    "[a]\nchannels = two\n",
    "[a]\nqatt_enabled = maybe\n",
    "channels = 2\n",
    "[a]\nchannels = 3\ndim = 16\n",
    "[a]\ntask = clustering\n",
    "[a]\npreset = yago\n",
    "[a]\nentity_vocab = some\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_paths_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig().validate_paths()
    with pytest.raises(ConfigError):
        RunConfig(train_path=str(tmp_path / "nope.txt")).validate_paths()
    (tmp_path / "t.txt").write_text("")
    with pytest.raises(ConfigError):
        RunConfig(task="entity_classification", train_path=str(tmp_path / "t.txt")).validate_paths()


def test_presets_and_overrides(tmp_path):
    assert parse_config("[a]\npreset = FB15k-237\ndim = 200\n").channels == 8
    assert {k: DATASET_PRESETS[k] for k in ("fb15k-237", "wn18rr")} == {"fb15k-237": 8, "wn18rr": 4}
    p = tmp_path / "c.ini"
    p.write_text("[a]\nseed = 3\n")
    assert load_config(p).seed == 3
    assert load_config(p, seed=9).seed == 9
    assert load_config(p, seed=None).seed == 3


def test_roundtrip_and_digest():
    cfg = RunConfig(channels=2, dim=8, d_q=4, qatt_enabled=False)
    again = parse_config(cfg.dumps())
    assert again == cfg and again.digest() == cfg.digest()
    assert cfg.replace(seed=1).digest() != cfg.digest()
    assert RunConfig(preset="wn18rr", dim=8).replace(channels=2).channels == 2


def test_derived_model_configs():
    cfg = RunConfig(layers=2, channels=4, dim=16, relation_dim=8, heads=2, d_q=8)
    mc = cfg.model_config()
    assert len(mc.layers) == 2 and mc.d_out_e == 16
    qc = cfg.qatt_config(mc)
    assert qc.channels == 4 and qc.d_r == mc.d_out_r and qc.heads == 2
