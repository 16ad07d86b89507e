"""Binary Merkle trees over 32-byte digests, with inclusion proofs.

Leaves are inserted as-is (they are already digests of session secrets);
interior nodes are ``sha256(0x01 || left || right)``. A level of odd width
duplicates its last node, so every proof has exactly ceil(log2 N) steps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

from .crypto import DIGEST_SIZE, sha256
from .errors import CodecError

NODE_PREFIX = b"\x01"


class Side(IntEnum):
    """Position of a sibling relative to the running hash."""

    LEFT = 0
    RIGHT = 1


def hash_pair(left: bytes, right: bytes) -> bytes:
    return sha256(NODE_PREFIX + left + right)


@dataclass(frozen=True)
class MerkleTree:
    leaves: tuple
    levels: tuple

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def __len__(self) -> int:
        return len(self.leaves)


@dataclass(frozen=True)
class MerkleProof:
    index: int
    siblings: tuple = ()

    def to_bytes(self) -> bytes:
        out = [struct.pack("!IB", self.index, len(self.siblings))]
        for digest, side in self.siblings:
            out.append(digest + bytes([side]))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MerkleProof":
        if len(data) < 5:
            raise CodecError("truncated Merkle proof")
        index, count = struct.unpack_from("!IB", data)
        if len(data) != 5 + count * (DIGEST_SIZE + 1):
            raise CodecError("Merkle proof length does not match sibling count")
        siblings = []
        off = 5
        for _ in range(count):
            digest = data[off : off + DIGEST_SIZE]
            side = data[off + DIGEST_SIZE]
            if side not in (Side.LEFT, Side.RIGHT):
                raise CodecError(f"bad sibling side byte {side}")
            siblings.append((digest, Side(side)))
            off += DIGEST_SIZE + 1
        return cls(index=index, siblings=tuple(siblings))


def merkle_build(leaves: Sequence[bytes]) -> MerkleTree:
    if not leaves:
        raise ValueError("cannot build a Merkle tree without leaves")
    for leaf in leaves:
        if len(leaf) != DIGEST_SIZE:
            raise ValueError("Merkle leaves must be 32-byte digests")
    level = tuple(bytes(leaf) for leaf in leaves)
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + (level[-1],)
        level = tuple(hash_pair(level[i], level[i + 1]) for i in range(0, len(level), 2))
        levels.append(level)
    return MerkleTree(leaves=levels[0], levels=tuple(levels))


def merkle_root(tree: MerkleTree) -> bytes:
    return tree.root


def merkle_prove(tree: MerkleTree, index: int) -> MerkleProof:
    if not 0 <= index < len(tree.leaves):
        raise IndexError(f"leaf index {index} out of range for {len(tree.leaves)} leaves")
    siblings = []
    pos = index
    for level in tree.levels[:-1]:
        if pos % 2:
            siblings.append((level[pos - 1], Side.LEFT))
        else:
            # duplicated last node when the level has odd width
            sib = pos + 1 if pos + 1 < len(level) else pos
            siblings.append((level[sib], Side.RIGHT))
        pos //= 2
    return MerkleProof(index=index, siblings=tuple(siblings))


def merkle_verify(leaf: bytes, proof: MerkleProof, root: bytes) -> bool:
    # the index must agree with every side flag, so a tampered index never passes
    if proof.index >> len(proof.siblings):
        return False
    node = leaf
    for depth, (sibling, side) in enumerate(proof.siblings):
        expected = Side.LEFT if (proof.index >> depth) & 1 else Side.RIGHT
        if side != expected or len(sibling) != DIGEST_SIZE:
            return False
        node = hash_pair(sibling, node) if side == Side.LEFT else hash_pair(node, sibling)
    return node == root
