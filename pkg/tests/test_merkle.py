from __future__ import annotations

import pytest

from salve.crypto import sha256
from salve.errors import CodecError
from salve.merkle import MerkleProof, Side, hash_pair, merkle_build, merkle_prove, merkle_root, merkle_verify


def leaves(n):
    return [sha256(i.to_bytes(4, "big")) for i in range(n)]


def test_single_leaf_is_root_with_empty_proof():
    (leaf,) = leaves(1)
    tree = merkle_build([leaf])
    assert merkle_root(tree) == leaf
    proof = merkle_prove(tree, 0)
    assert proof.siblings == ()
    assert merkle_verify(leaf, proof, leaf)


def test_two_leaves_sibling_is_other_digest():
    h1, h2 = leaves(2)
    tree = merkle_build([h1, h2])
    assert merkle_root(tree) == sha256(b"\x01" + h1 + h2)
    proof = merkle_prove(tree, 0)
    assert proof.siblings == ((h2, Side.RIGHT),)


@pytest.mark.parametrize("n", range(1, 34))
def test_every_leaf_round_trips(n):
    ls = leaves(n)
    tree = merkle_build(ls)
    for i, leaf in enumerate(ls):
        proof = merkle_prove(tree, i)
        assert merkle_verify(leaf, proof, tree.root)
        assert MerkleProof.from_bytes(proof.to_bytes()) == proof


def test_odd_level_duplicates_last_node():
    a, b, c = leaves(3)
    tree = merkle_build([a, b, c])
    assert tree.root == hash_pair(hash_pair(a, b), hash_pair(c, c))


def test_single_bit_corruptions_of_four_leaf_proofs_all_reject():
    ls = leaves(4)
    tree = merkle_build(ls)
    for i, leaf in enumerate(ls):
        wire = merkle_prove(tree, i).to_bytes()
        for pos in range(len(wire)):
            for bit in range(8):
                bad = bytearray(wire)
                bad[pos] ^= 1 << bit
                try:
                    proof = MerkleProof.from_bytes(bytes(bad))
                except CodecError:
                    continue
                assert not merkle_verify(leaf, proof, tree.root), (i, pos, bit)


def test_proof_for_other_leaf_rejected():
    ls = leaves(8)
    tree = merkle_build(ls)
    assert not merkle_verify(ls[3], merkle_prove(tree, 2), tree.root)


def test_leaf_or_interior_node_cannot_pose_as_root_level():
    ls = leaves(4)
    tree = merkle_build(ls)
    interior = tree.levels[1][0]
    assert not merkle_verify(interior, MerkleProof(0, ()), tree.root)


def test_build_rejects_bad_input():
    with pytest.raises(ValueError):
        merkle_build([])
    with pytest.raises(ValueError):
        merkle_build([b"short"])
    with pytest.raises(IndexError):
        merkle_prove(merkle_build(leaves(2)), 2)


def test_proof_codec_rejects_malformed():
    with pytest.raises(CodecError):
        MerkleProof.from_bytes(b"\x00\x00")
    with pytest.raises(CodecError):
        MerkleProof.from_bytes(b"\x00\x00\x00\x00\x01" + bytes(32))
    with pytest.raises(CodecError):
        MerkleProof.from_bytes(b"\x00\x00\x00\x00\x01" + bytes(32) + b"\x07")
