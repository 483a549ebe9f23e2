import json
import os

import numpy as np
import pytest

import gce

DATA = os.path.join(os.path.dirname(__file__), "..", "data")


def corpus():
    with open(os.path.join(DATA, "toy_corpus.smi")) as f:
        return [line.split()[0] for line in f if line.strip() and not line.startswith("#")]


@pytest.fixture(scope="module")
def checkpoint():
    return gce.pretrain(corpus(), epochs=3, layers=2, hidden=8)


def test_molecule_basics():
    m = gce.Molecule("OCC")
    assert m.num_atoms == 3
    assert m.num_bonds == 2
    assert m.atoms == ["O", "C", "C"]
    assert m.is_valid()
    assert m.canonical_key() == gce.canonical_key("CCO")
    assert gce.canonical_smiles("OCC") == gce.canonical_smiles("CCO")
    assert m.descriptors()["heavy_atoms"] == 3.0


def test_validity_and_errors():
    assert not gce.is_valid("F(F)F")
    assert gce.Molecule("F(F)F").violations()
    with pytest.raises(gce.ParseError):
        gce.Molecule("C(C")
    with pytest.raises(gce.GceError):
        gce.load_checkpoint("/no/such/checkpoint.gce")


def test_metrics_identity():
    smiles = corpus()
    r = gce.evaluate(smiles, smiles)
    assert r["kl_score"] >= 0.999
    assert r["novelty"] == 0.0
    assert r["validity"] == 1.0
    u = gce.evaluate(["CCO", "OCC", "C=O"], ["N"])
    assert u["uniqueness"] == pytest.approx(2 / 3)


def test_pretrain_generate_reconstruct(checkpoint, tmp_path):
    assert checkpoint.epoch == 3
    assert len(checkpoint.loss_history) == 3
    params = checkpoint.parameters()
    assert isinstance(params["node_in.w"], np.ndarray)
    assert json.loads(checkpoint.config)["num_layers"] == 2

    a = gce.generate(checkpoint, corpus(), shots=2, num_samples=20, seed=4)
    b = gce.generate(checkpoint, corpus(), shots=2, num_samples=20, seed=4)
    assert a == b
    assert len(a) == 20

    r = gce.reconstruct(checkpoint, "CCO", mask_rate=0.1, seed=3)
    assert len(r["masked_atoms"]) == 1
    assert isinstance(r["smiles"], str)

    path = str(tmp_path / "ckpt.gce")
    checkpoint.save(path)
    again = gce.load_checkpoint(path)
    for name, value in again.parameters().items():
        assert np.array_equal(value, params[name])


def test_cli_entry(tmp_path):
    code, out, err = gce.run_cli([])
    assert code == 2
    smi = os.path.join(DATA, "toy_corpus.smi")
    code, out, err = gce.run_cli(["evaluate", "--generated", smi, "--reference", smi])
    assert code == 0, err
    assert json.loads(out)["kl_score"] >= 0.999
