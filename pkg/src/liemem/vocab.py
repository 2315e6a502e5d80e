"""Token id layout shared by task generators and models.

Content symbols occupy ids 0 .. vocab-1. Five reserved symbols follow:
sequence start/end markers for the encoder, the fixed decoder placeholder,
the end-of-output symbol the decoder must emit, and the unary marker '@'
used by the repeat and priority-sort tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

N_SPECIALS = 5


@dataclass(frozen=True)
class Specials:
    bos: int        # <s>   encoder input start
    eos_in: int     # </s>  encoder input end
    go: int         # fixed decoder placeholder input
    eos_out: int    # </e>  end of output
    unary: int      # @     unary counter symbol


def specials(vocab: int) -> Specials:
    return Specials(bos=vocab, eos_in=vocab + 1, go=vocab + 2, eos_out=vocab + 3, unary=vocab + 4)


def total_vocab(vocab: int) -> int:
    return vocab + N_SPECIALS
