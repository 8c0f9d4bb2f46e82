"""Round-trip and corruption tests for the EMB1/TOK1 and TSV formats."""

import numpy as np
import pytest

from ipqgr.io_formats import (
    FormatError,
    read_embeddings,
    read_qrels,
    read_run,
    read_token_docs,
    write_embeddings,
    write_qrels,
    write_run,
    write_token_docs,
)
from ipqgr.metrics import QrelEntry


class TestEmbeddings:
    def test_minimal_file(self, tmp_path):
        path = tmp_path / "m.emb"
        write_embeddings(path, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        mat = read_embeddings(path)
        assert mat.shape == (2, 3)
        assert np.array_equal(mat, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])

    def test_round_trip_is_bit_identical(self, tmp_path):
        mat = np.random.default_rng(0).normal(size=(17, 5)).astype(np.float32)
        p1, p2 = tmp_path / "a.emb", tmp_path / "b.emb"
        write_embeddings(p1, mat)
        write_embeddings(p2, read_embeddings(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_payload_names_byte_counts(self, tmp_path):
        path = tmp_path / "t.emb"
        write_embeddings(path, np.ones((3, 4)))
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(FormatError, match=r"expected 60 bytes .* got 55"):
            read_embeddings(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError, match="bad magic"):
            read_embeddings(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short.emb"
        path.write_bytes(b"EMB1\x01")
        with pytest.raises(FormatError, match="truncated header"):
            read_embeddings(path)

    def test_non_matrix_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_embeddings(tmp_path / "x.emb", np.zeros(5))


class TestTokenDocs:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        docs = [rng.normal(size=(int(rng.integers(1, 9)), 3)).astype(np.float32) for _ in range(6)]
        path = tmp_path / "docs.tok"
        write_token_docs(path, docs)
        back = read_token_docs(path)
        assert len(back) == 6
        for a, b in zip(docs, back):
            assert np.array_equal(a.astype(float), b)

    def test_trailing_bytes_detected(self, tmp_path):
        path = tmp_path / "t.tok"
        write_token_docs(path, [np.ones((2, 2))])
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing bytes"):
            read_token_docs(path)

    def test_truncated_document(self, tmp_path):
        path = tmp_path / "t.tok"
        write_token_docs(path, [np.ones((4, 2))])
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(FormatError, match="doc 0"):
            read_token_docs(path)

    def test_inconsistent_token_dims_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_token_docs(tmp_path / "x.tok", [np.ones((2, 2)), np.ones((2, 3))])


class TestQrels:
    def test_round_trip(self, tmp_path):
        qrels = {0: QrelEntry(10, 0), 5: QrelEntry(11, 3), "qx": QrelEntry("docy", 1)}
        path = tmp_path / "qrels.tsv"
        write_qrels(path, qrels)
        assert read_qrels(path) == qrels

    def test_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "qrels.tsv"
        path.write_text("1\t2\t0\n\n3\t4\t1\n")
        assert read_qrels(path) == {1: QrelEntry(2, 0), 3: QrelEntry(4, 1)}

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "qrels.tsv"
        path.write_text("1\t2\t0\n1\t2\n")
        with pytest.raises(FormatError, match=":2:"):
            read_qrels(path)


class TestRun:
    def test_round_trip_of_rankings(self, tmp_path):
        scores = {0: [(7, -0.5), (3, -1.25)], 1: [(2, -0.1)]}
        path = tmp_path / "run.tsv"
        write_run(path, scores)
        assert read_run(path) == {0: [7, 3], 1: [2]}
        lines = path.read_text().strip().split("\n")
        assert lines[0].split("\t") == ["0", "7", "1", "-0.5"]

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "run.tsv"
        path.write_text("0\t1\t1\n")
        with pytest.raises(FormatError):
            read_run(path)
