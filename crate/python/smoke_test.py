"""Smoke test for the rwde_py extension module."""

import json

import rwde_py


def main():
    p = rwde_py.Params("-1:1,1:3")
    assert (p.left, p.right) == (1, 1)
    assert abs(p.kappa1 - 2.0) < 1e-12
    assert p.reflect().kappa1 == -p.kappa1

    k = rwde_py.kappa0(rwde_py.Params("-6:1,2:1,3:1"))
    assert k.value == 6.0 and k.witness == [0, 3, 6] and k.certified, k

    regime, ballistic, k0, k1, certified = rwde_py.classify(p)
    assert regime == "TransientRight" and ballistic and certified

    path = rwde_py.simulate(p, 200, seed=5)
    assert len(path) == 201 and path[0] == 0
    assert path == rwde_py.simulate(p, 200, seed=5)

    v = rwde_py.velocity(p, steps=20000, replicas=50, seed=1)
    assert abs(v.v_hat - 1 / 3) < 0.05, v

    passed, evidence = rwde_py.verify_suite("harmonic", replicas=100, seed=3)
    assert passed, evidence
    json.loads(evidence)

    try:
        rwde_py.Params("-1:1,1:-2")
    except ValueError:
        pass
    else:
        raise AssertionError("negative weight accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
