#!/usr/bin/env python3
"""
Pruebas de la configuración INI, las asignaciones --set y los nombres de variantes.
"""
import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core.errors import ConfigError
from training.config import (FinetuneConfig, PretrainConfig, RunConfig, load_config, save_config,
                             variant_name)


def test_valores_por_defecto():
    cfg = RunConfig()
    assert cfg.node2vec.dim == 256
    assert cfg.pretrain.model_dim == 256
    assert cfg.pretrain.hops == (2, 3)
    assert cfg.data.ratios == (8, 1, 1)
    assert cfg.finetune.bottleneck == 8


def test_lectura_parcial(tmp_path):
    path = tmp_path / "config.ini"
    path.write_text("[pretrain]\nepochs = 7\nhops = 2,4\nnon_con = true\n\n[data]\nneg_ratio = 10\n")
    cfg = load_config(str(path))
    assert cfg.pretrain.epochs == 7
    assert cfg.pretrain.hops == (2, 4)
    assert cfg.pretrain.non_con
    assert cfg.pretrain.effective_lambda == 0.0
    assert cfg.data.neg_ratio == 10.0
    assert cfg.finetune.epochs == 200


@pytest.mark.parametrize("text", [
    "[pretrian]\nepochs = 3\n",
    "[pretrain]\nepoch = 3\n",
    "[pretrain]\nepochs = tres\n",
    "[pretrain]\nnon_con = quizas\n",
    "[pretrain]\nepochs = 0\n",
    "[pretrain]\ncandidate_policy = todos\n",
])
def test_errores_de_configuracion(tmp_path, text):
    path = tmp_path / "config.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_archivo_inexistente(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "no.ini"))


def test_asignaciones_set():
    cfg = RunConfig().override(["pretrain.lr=0.05", "node2vec.dim = 32", "finetune.trad=yes"])
    assert cfg.pretrain.lr == 0.05
    assert cfg.node2vec.dim == 32
    assert cfg.finetune.trad
    for bad in ("pretrain.lr", "lr=0.1", "modelo.lr=0.1", "pretrain.nada=1"):
        with pytest.raises(ConfigError):
            RunConfig().override([bad])


def test_guardar_y_leer(tmp_path):
    cfg = RunConfig().override(["pretrain.hops=2,3,4", "data.seeds=3,4", "finetune.non_sa=true",
                                "data.edges=datos/cora.edges"])
    path = str(tmp_path / "config.ini")
    save_config(cfg, path)
    again = load_config(path)
    assert again == cfg
    assert again.fingerprint() == cfg.fingerprint()


def test_semilla():
    cfg = RunConfig().with_seed(9)
    assert cfg.pretrain.seed == 9 and cfg.finetune.seed == 9


def test_validaciones_de_arquitectura():
    with pytest.raises(ConfigError):
        PretrainConfig(gat_heads=3, gat_head_dim=5, transformer_heads=4)
    with pytest.raises(ConfigError):
        PretrainConfig(hops=(1, 2))
    with pytest.raises(ConfigError):
        FinetuneConfig(trad=True, non_sa=True)
    with pytest.raises(ConfigError):
        FinetuneConfig(dropout=1.0)


def test_nombres_de_variantes():
    assert variant_name() == "GAATNet"
    assert variant_name((), ()) == "GAATNet"
    assert variant_name(("non_aug",), ()) == "NonAug"
    assert variant_name(("non_con",), ("non_con", "non_sa")) == "NonCon+NonSA"
    assert variant_name(PretrainConfig(score_dot=True).ablations(), FinetuneConfig(trad=True).ablations()) \
        == "GAATNet_dot+Trad"
    assert FinetuneConfig(scratch=True).ablations() == ("scratch",)
