#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sure/corpus.hpp"
#include "sure/emb_io.hpp"
#include "sure/errors.hpp"
#include "sure/matrix.hpp"
#include "sure/rng.hpp"

using namespace sure;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
    const fs::path dir = fs::temp_directory_path() / "sure_test_embio";
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_raw(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// One study exercising every optional field: probs on one image only,
// labels and embeddings on report and both priors, abbreviation guards and
// a decimal in the prior2 text.
const char* kGoldenLine =
    R"({"study_id":"s0001","images":[)"
    R"({"image_id":"i1","view_tag":"PA","view_probs":[0.9,0.05,0.03,0.02],)"
    R"("embedding":{"file":"s0001.emb","row_begin":0,"row_end":4}},)"
    R"({"image_id":"i2","view_tag":"LATERAL",)"
    R"("embedding":{"file":"s0001.emb","row_begin":4,"row_end":8}}],)"
    R"("report":{"findings_text":"stable cardiomegaly. no pneumothorax.",)"
    R"("labels":[[0,1,0,0,0,0,0,0,0,0,0,0,0,0],[0,0,0,0,0,0,0,0,-1,0,0,0,0,0]]},)"
    R"("prior1":{"findings_text":"mild edema is seen. lungs otherwise clear.",)"
    R"("embedding":{"file":"s0001.prior.emb","row_begin":0,"row_end":2},)"
    R"("labels":[[0,0,0,0,1,0,0,0,0,0,0,0,0,0],[0,0,0,0,0,0,0,0,0,0,0,0,0,1]]},)"
    R"("prior2":{"findings_text":"seen by dr. smith at 3 p.m. for evaluation. effusion measures 1.5 cm.",)"
    R"("embedding":{"file":"s0001.prior.emb","row_begin":2,"row_end":4},)"
    R"("labels":[[0,0,0,0,0,0,0,0,0,2,0,0,0,0],[0,0,0,0,0,0,0,0,0,1,0,0,0,0]]}})";

}  // namespace

TEST_CASE("embedding files round-trip bitwise", "[emb_io]") {
    const fs::path a = test_dir() / "roundtrip_a.emb";
    const fs::path b = test_dir() / "roundtrip_b.emb";

    Rng rng(99);
    Matrix m(7, 5);
    // f32 storage: seed the matrix with values that are exactly representable.
    for (std::size_t i = 0; i < m.rows() * m.cols(); ++i)
        m.data()[i] = static_cast<double>(static_cast<float>(rng.normal()));

    write_embeddings(a, m);
    const Matrix back = read_embeddings(a);
    REQUIRE(back.rows() == m.rows());
    REQUIRE(back.cols() == m.cols());
    for (std::size_t i = 0; i < m.rows() * m.cols(); ++i)
        REQUIRE(back.data()[i] == m.data()[i]);

    write_embeddings(b, back);
    REQUIRE(file_bytes(a) == file_bytes(b));
}

TEST_CASE("doubles narrow to the nearest f32 on write", "[emb_io]") {
    const fs::path p = test_dir() / "narrow.emb";
    Matrix m(1, 1);
    m(0, 0) = 0.1;  // not representable in f32
    write_embeddings(p, m);
    const Matrix back = read_embeddings(p);
    REQUIRE(back(0, 0) == static_cast<double>(static_cast<float>(0.1)));
}

TEST_CASE("zero-row embedding files round-trip", "[emb_io]") {
    const fs::path p = test_dir() / "empty.emb";
    write_embeddings(p, Matrix(0, 5));
    const Matrix back = read_embeddings(p);
    REQUIRE(back.rows() == 0);
    REQUIRE(back.cols() == 5);
}

TEST_CASE("truncated header reports expected and actual byte counts", "[emb_io]") {
    const fs::path p = test_dir() / "short_header.emb";
    write_raw(p, std::string("EMB1\x02\x00", 6));
    try {
        read_embeddings(p);
        FAIL("expected TruncationError");
    } catch (const TruncationError& e) {
        REQUIRE(e.expected_bytes == 12);
        REQUIRE(e.actual_bytes == 6);
    }
}

TEST_CASE("truncated payload reports expected and actual byte counts", "[emb_io]") {
    const fs::path p = test_dir() / "short_payload.emb";
    // Header claims 2x3 f32 (24 payload bytes) but only 10 follow.
    std::string bytes = "EMB1";
    bytes += std::string("\x02\x00\x00\x00\x03\x00\x00\x00", 8);
    bytes += std::string(10, '\0');
    write_raw(p, bytes);
    try {
        read_embeddings(p);
        FAIL("expected TruncationError");
    } catch (const TruncationError& e) {
        REQUIRE(e.expected_bytes == 36);
        REQUIRE(e.actual_bytes == 22);
    }
}

TEST_CASE("bad magic and degenerate headers are format errors", "[emb_io]") {
    const fs::path magic = test_dir() / "bad_magic.emb";
    write_raw(magic, std::string("EMB0\x00\x00\x00\x00\x00\x00\x00\x00", 12));
    REQUIRE_THROWS_AS(read_embeddings(magic), FormatError);

    const fs::path zero_dim = test_dir() / "zero_dim.emb";
    write_raw(zero_dim, std::string("EMB1\x03\x00\x00\x00\x00\x00\x00\x00", 12));
    REQUIRE_THROWS_AS(read_embeddings(zero_dim), FormatError);

    REQUIRE_THROWS_AS(read_embeddings(test_dir() / "does_not_exist.emb"), FormatError);
}

TEST_CASE("non-finite stored values are rejected on read", "[emb_io]") {
    const fs::path p = test_dir() / "inf.emb";
    Matrix m(1, 2);
    m(0, 0) = std::numeric_limits<double>::infinity();
    m(0, 1) = 1.0;
    write_embeddings(p, m);
    REQUIRE_THROWS_AS(read_embeddings(p), FormatError);

    Matrix n(1, 1);
    n(0, 0) = std::numeric_limits<double>::quiet_NaN();
    write_embeddings(p, n);
    REQUIRE_THROWS_AS(read_embeddings(p), FormatError);
}

TEST_CASE("golden corpus line parses field by field", "[corpus]") {
    const Study s = parse_study_line(kGoldenLine, 1);

    REQUIRE(s.study_id == "s0001");
    REQUIRE(s.images.size() == 2);
    REQUIRE(s.images[0].image_id == "i1");
    REQUIRE(s.images[0].view_tag.kind == ViewKind::PA);
    REQUIRE(s.images[0].view_probs.has_value());
    REQUIRE((*s.images[0].view_probs)[kProbPA] == 0.9);
    REQUIRE((*s.images[0].view_probs)[kProbOther] == 0.02);
    REQUIRE((s.images[0].embedding_ref == EmbeddingRef{"s0001.emb", 0, 4}));
    REQUIRE(s.images[1].view_tag.kind == ViewKind::Lateral);
    REQUIRE_FALSE(s.images[1].view_probs.has_value());
    REQUIRE((s.images[1].embedding_ref == EmbeddingRef{"s0001.emb", 4, 8}));

    REQUIRE((s.report.sentences ==
             std::vector<std::string>{"stable cardiomegaly.", "no pneumothorax."}));
    REQUIRE(s.report.label_vectors.has_value());
    REQUIRE(s.report.label_vectors->size() == 2);
    REQUIRE((*s.report.label_vectors)[0][1] == FindingLabel::Positive);
    REQUIRE((*s.report.label_vectors)[1][8] == FindingLabel::Negative);
    REQUIRE_FALSE(s.report.embedding_ref.has_value());

    REQUIRE(s.prior1.has_value());
    REQUIRE(s.prior1->sentences.size() == 2);
    REQUIRE((s.prior1->embedding_ref == EmbeddingRef{"s0001.prior.emb", 0, 2}));
    REQUIRE((*s.prior1->label_vectors)[0][4] == FindingLabel::Positive);
    REQUIRE((*s.prior1->label_vectors)[1][kNoFindingIndex] == FindingLabel::Positive);

    // Abbreviation guards and the decimal point keep prior2 at two sentences.
    REQUIRE(s.prior2.has_value());
    REQUIRE((s.prior2->sentences ==
             std::vector<std::string>{"seen by dr. smith at 3 p.m. for evaluation.",
                                      "effusion measures 1.5 cm."}));
    REQUIRE((*s.prior2->label_vectors)[0][9] == FindingLabel::Uncertain);
    REQUIRE((*s.prior2->label_vectors)[1][9] == FindingLabel::Positive);
}

TEST_CASE("study serialization round-trips through jsonl", "[corpus]") {
    const Study s = parse_study_line(kGoldenLine, 1);
    const std::string line = study_to_jsonl(s);
    const Study again = parse_study_line(line, 1);
    REQUIRE(again == s);
    REQUIRE(study_to_jsonl(again) == line);
    // Field order is part of the file contract.
    REQUIRE(line.rfind("{\"study_id\":\"s0001\",\"images\":[{\"image_id\":\"i1\"", 0) == 0);
}

TEST_CASE("one bad line is isolated with its line number", "[corpus]") {
    const fs::path p = test_dir() / "isolation.jsonl";
    const Study base = parse_study_line(kGoldenLine, 1);
    {
        std::ofstream out(p, std::ios::trunc);
        for (int i = 1; i <= 100; ++i) {
            if (i == 42) {
                out << "{this is not json\n";
                continue;
            }
            Study s = base;
            s.study_id = "s" + std::to_string(i);
            out << study_to_jsonl(s) << '\n';
        }
    }
    const CorpusLoad load = load_corpus(p);
    REQUIRE(load.studies.size() == 99);
    REQUIRE(load.errors.size() == 1);
    REQUIRE(load.errors[0].line_no == 42);
    REQUIRE(load.studies[41].study_id == "s43");  // order preserved around the gap
}

TEST_CASE("blank lines are skipped and never counted", "[corpus]") {
    const fs::path p = test_dir() / "blanks.jsonl";
    {
        std::ofstream out(p, std::ios::trunc);
        out << '\n' << "  \t\r\n" << kGoldenLine << '\n' << '\n' << kGoldenLine << "\n\n";
    }
    const CorpusLoad load = load_corpus(p);
    REQUIRE(load.studies.size() == 2);
    REQUIRE(load.errors.empty());
}

TEST_CASE("parse errors carry physical line numbers past blanks", "[corpus]") {
    const fs::path p = test_dir() / "blank_lineno.jsonl";
    {
        std::ofstream out(p, std::ios::trunc);
        // 9 valid studies, 3 blanks, then a bad line at physical line 13.
        for (int i = 1; i <= 9; ++i) {
            Study s = parse_study_line(kGoldenLine, 1);
            s.study_id = "s" + std::to_string(i);
            out << study_to_jsonl(s) << '\n';
        }
        out << "\n\n\n";
        out << "not json\n";
    }
    const CorpusLoad load = load_corpus(p);
    REQUIRE(load.studies.size() == 9);
    REQUIRE(load.errors.size() == 1);
    REQUIRE(load.errors[0].line_no == 13);
}

TEST_CASE("invalid label codes surface as parse errors naming the code", "[corpus]") {
    std::string line = kGoldenLine;
    const std::string needle = "[0,1,0,0,0,0,0,0,0,0,0,0,0,0]";
    line.replace(line.find(needle), needle.size(), "[0,7,0,0,0,0,0,0,0,0,0,0,0,0]");
    try {
        parse_study_line(line, 7);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(e.line_no == 7);
        REQUIRE(std::string(e.what()).find("invalid label code 7") != std::string::npos);
    }
}

TEST_CASE("structurally invalid studies are parse errors", "[corpus]") {
    // prior2 without prior1
    Study s = parse_study_line(kGoldenLine, 1);
    s.prior1.reset();
    REQUIRE_THROWS_AS(parse_study_line(study_to_jsonl(s), 1), ParseError);

    // no images
    Study t = parse_study_line(kGoldenLine, 1);
    t.images.clear();
    REQUIRE_THROWS_AS(parse_study_line(study_to_jsonl(t), 1), ParseError);

    // view probabilities off the simplex
    std::string probs = kGoldenLine;
    const std::string needle = "[0.9,0.05,0.03,0.02]";
    probs.replace(probs.find(needle), needle.size(), "[0.9,0.9,0.03,0.02]");
    REQUIRE_THROWS_AS(parse_study_line(probs, 1), ParseError);

    // label row too short
    std::string labels = kGoldenLine;
    const std::string row = "[0,0,0,0,0,0,0,0,-1,0,0,0,0,0]";
    labels.replace(labels.find(row), row.size(), "[0,0]");
    REQUIRE_THROWS_AS(parse_study_line(labels, 1), ParseError);
}

TEST_CASE("a mostly-bad corpus is rejected outright", "[corpus]") {
    const fs::path p = test_dir() / "rejected.jsonl";
    {
        std::ofstream out(p, std::ios::trunc);
        for (int i = 1; i <= 8; ++i) {
            Study s = parse_study_line(kGoldenLine, 1);
            s.study_id = "s" + std::to_string(i);
            out << study_to_jsonl(s) << '\n';
        }
        out << "bad one\n" << "bad two\n";
    }
    try {
        load_corpus(p);
        FAIL("expected CorpusRejected");
    } catch (const CorpusRejected& e) {
        REQUIRE(e.bad_lines == 2);
        REQUIRE(e.total_lines == 10);
    }

    // Exactly 10% bad stays within tolerance.
    const fs::path ok = test_dir() / "tolerated.jsonl";
    {
        std::ofstream out(ok, std::ios::trunc);
        for (int i = 1; i <= 9; ++i) {
            Study s = parse_study_line(kGoldenLine, 1);
            s.study_id = "s" + std::to_string(i);
            out << study_to_jsonl(s) << '\n';
        }
        out << "bad one\n";
    }
    const CorpusLoad load = load_corpus(ok);
    REQUIRE(load.studies.size() == 9);
    REQUIRE(load.errors.size() == 1);
}

TEST_CASE("write_corpus then load_corpus preserves studies exactly", "[corpus]") {
    const fs::path p = test_dir() / "write_read.jsonl";
    std::vector<Study> studies;
    for (int i = 1; i <= 5; ++i) {
        Study s = parse_study_line(kGoldenLine, 1);
        s.study_id = "w" + std::to_string(i);
        studies.push_back(std::move(s));
    }
    write_corpus(p, studies);
    const CorpusLoad load = load_corpus(p);
    REQUIRE(load.errors.empty());
    REQUIRE(load.studies == studies);
}
