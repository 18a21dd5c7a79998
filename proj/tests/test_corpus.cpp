#include <gtest/gtest.h>

#include <cstring>

#include "m2s/synthetic.hpp"
#include "test_util.hpp"

using namespace m2s;
using m2s::testing::scratch_dir;
using m2s::testing::slurp;

namespace {

CorpusManifest small_manifest(int d_in, std::vector<std::pair<std::string, int>> movies) {
    CorpusManifest m;
    m.d_in = d_in;
    for (auto& [id, shots] : movies) {
        MovieRecord r;
        r.movie_id = id;
        r.genres = {"drama"};
        r.shot_count = shots;
        m.movies.push_back(r);
    }
    return m;
}

MovieTable random_table(const CorpusManifest& m, std::uint64_t seed) {
    Rng rng(seed);
    MovieTable t;
    for (const auto& r : m.movies) t[r.movie_id] = normal_matrix(r.shot_count, m.d_in, 1.0, rng).cast<float>();
    return t;
}

bool bit_equal(const MatrixF& a, const MatrixF& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace

TEST(Corpus, WriteThenLoadIsBitExact) {
    const auto dir = scratch_dir("corpus_roundtrip");
    const auto m = small_manifest(8, {{"a", 5}, {"b", 1}, {"c", 12}});
    const auto table = random_table(m, 1);
    const auto path = write_corpus(m, table, dir);
    const Corpus c = load_corpus(path);
    ASSERT_EQ(c.manifest().movies.size(), 3u);
    for (const auto& [id, data] : table) EXPECT_TRUE(bit_equal(c.read(id).data, data)) << id;
}

TEST(Corpus, EmptyCorpusRoundTrips) {
    const auto dir = scratch_dir("corpus_empty");
    const auto path = write_corpus(small_manifest(4, {}), {}, dir);
    const Corpus c = load_corpus(path);
    EXPECT_TRUE(c.manifest().movies.empty());
    EXPECT_TRUE(c.load_all().empty());
}

TEST(Corpus, EmbeddingFileLayout) {
    const auto dir = scratch_dir("corpus_layout");
    MatrixF x(2, 3);
    x << 1, 2, 3, 4, 5, 6;
    write_embedding_file(dir / "x.m2se", x);
    const std::string bytes = slurp(dir / "x.m2se");
    ASSERT_EQ(bytes.size(), 16u + 4u * 6u);
    EXPECT_EQ(bytes.substr(0, 4), "M2SE");
    auto u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[off + static_cast<std::size_t>(i)]);
        return v;
    };
    EXPECT_EQ(u32(4), 1u);
    EXPECT_EQ(u32(8), 2u);
    EXPECT_EQ(u32(12), 3u);
    float third;
    std::memcpy(&third, bytes.data() + 16 + 2 * 4, 4);
    EXPECT_EQ(third, 3.0f);
}

TEST(Corpus, MissingEmbeddingFileIsNamed) {
    const auto dir = scratch_dir("corpus_missing");
    const auto m = small_manifest(8, {{"a", 3}, {"b", 4}});
    const auto path = write_corpus(m, random_table(m, 2), dir);
    std::filesystem::remove(dir / "embeddings" / "b.m2se");
    try {
        load_corpus(path);
        FAIL() << "expected MissingFileError";
    } catch (const MissingFileError& e) {
        EXPECT_EQ(e.movie_id(), "b");
        EXPECT_NE(std::string(e.what()).find("missing embedding file"), std::string::npos);
    }
}

TEST(Corpus, HeaderDimensionMismatch) {
    const auto dir = scratch_dir("corpus_dim");
    const auto m = small_manifest(8, {{"a", 3}});
    const auto path = write_corpus(m, random_table(m, 3), dir);
    Json doc = read_json(path);
    doc["d_in"] = 16;
    write_json(path, doc);
    EXPECT_THROW(load_corpus(path), DimensionMismatchError);
}

TEST(Corpus, ShotCountMismatch) {
    const auto dir = scratch_dir("corpus_shots");
    const auto m = small_manifest(4, {{"a", 3}});
    const auto path = write_corpus(m, random_table(m, 3), dir);
    Json doc = read_json(path);
    doc["movies"][0]["shot_count"] = 5;
    write_json(path, doc);
    EXPECT_THROW(load_corpus(path), DimensionMismatchError);
}

TEST(Corpus, NonFiniteValueDetectedOnRead) {
    const auto dir = scratch_dir("corpus_nan");
    const auto m = small_manifest(4, {{"a", 3}});
    auto table = random_table(m, 4);
    const auto path = write_corpus(m, table, dir);
    table["a"](1, 2) = std::numeric_limits<float>::quiet_NaN();
    write_embedding_file(dir / "embeddings" / "a.m2se", table["a"]);
    const Corpus c = load_corpus(path);
    try {
        c.read("a");
        FAIL() << "expected NonFiniteError";
    } catch (const NonFiniteError& e) {
        EXPECT_EQ(e.movie_id(), "a");
    }
}

TEST(Corpus, ManifestValidation) {
    auto dup = small_manifest(4, {{"a", 3}, {"a", 2}});
    EXPECT_THROW(validate_manifest(dup), ManifestError);
    auto zero = small_manifest(4, {{"a", 0}});
    EXPECT_THROW(validate_manifest(zero), ManifestError);
    auto self = small_manifest(4, {{"a", 3}});
    self.movies[0].more_like_this = std::vector<std::string>{"a"};
    EXPECT_THROW(validate_manifest(self), ManifestError);
    EXPECT_THROW(load_corpus(scratch_dir("corpus_none") / "manifest.json"), MissingFileError);
}

TEST(Corpus, ManifestJsonRoundTrip) {
    auto m = small_manifest(4, {{"a", 3}, {"b", 2}});
    m.movies[0].synopsis_embedding = std::vector<double>{0.5, -1.0};
    m.movies[1].more_like_this = std::vector<std::string>{"a"};
    const auto back = manifest_from_json(to_json(m));
    EXPECT_EQ(to_json(back), to_json(m));
}

TEST(LabeledScenes, JsonRoundTripKeepsLabelKinds) {
    const auto dir = scratch_dir("labels_roundtrip");
    std::vector<LabeledScene> s{
        {"a", 0, 9, "place", 3, "train"},
        {"a", 0, 9, "year", 2.0, "test"},
        {"a", 9, 18, "tags", std::vector<std::uint8_t>{0, 1, 1}, "train"},
    };
    write_labeled_scenes(dir / "l.jsonl", s);
    const auto back = read_labeled_scenes(dir / "l.jsonl");
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(label_kind(back[0].label), LabelKind::Class);
    EXPECT_EQ(label_kind(back[1].label), LabelKind::Real);
    EXPECT_EQ(std::get<double>(back[1].label), 2.0);
    EXPECT_EQ(label_kind(back[2].label), LabelKind::MultiLabel);
    EXPECT_EQ(back[1].split, "test");
}

TEST(LabeledScenes, SpansMustLieInsideMovie) {
    const auto m = small_manifest(4, {{"a", 10}});
    EXPECT_NO_THROW(validate_labeled_scenes(m, {{"a", 1, 10, "t", 0, "train"}}));
    EXPECT_THROW(validate_labeled_scenes(m, {{"a", 2, 11, "t", 0, "train"}}), CorpusError);
    EXPECT_THROW(validate_labeled_scenes(m, {{"a", 3, 3, "t", 0, "train"}}), CorpusError);
    EXPECT_THROW(validate_labeled_scenes(m, {{"a", 0, 2, "t", 0, "train"}, {"a", 0, 2, "t", 1.5, "train"}}),
                 CorpusError);
}

TEST(Synthetic, SameThemeCentroidsAreMoreSimilar) {
    SyntheticOptions o;  // 40 movies, 8 themes, 60-120 shots, d_in 32, noise 0.1
    const auto sc = generate_synthetic_corpus(o);
    double same = 0, cross = 0;
    int n_same = 0, n_cross = 0;
    double min_same = 1e9, max_cross = -1e9;
    for (const auto& a : sc.manifest.movies) {
        for (const auto& b : sc.manifest.movies) {
            if (a.movie_id >= b.movie_id) continue;
            const Eigen::RowVectorXd ca = sc.matrices.at(a.movie_id).cast<double>().colwise().mean();
            const Eigen::RowVectorXd cb = sc.matrices.at(b.movie_id).cast<double>().colwise().mean();
            const double c = cosine(ca, cb);
            if (sc.theme_of.at(a.movie_id) == sc.theme_of.at(b.movie_id)) {
                same += c;
                ++n_same;
                min_same = std::min(min_same, c);
            } else {
                cross += c;
                ++n_cross;
                max_cross = std::max(max_cross, c);
            }
        }
    }
    EXPECT_GT(same / n_same, cross / n_cross);
    EXPECT_GT(min_same, max_cross);
}

TEST(Synthetic, ZeroNoiseMeansNoIntraThemeVariance) {
    SyntheticOptions o;
    o.noise = 0.0;
    o.style = 3.0;  // scaled by noise, so also zero
    const auto sc = generate_synthetic_corpus(o);
    std::map<int, Eigen::RowVectorXf> background;
    for (const auto& rec : sc.manifest.movies) {
        const int theme = sc.theme_of.at(rec.movie_id);
        const MatrixF& x = sc.matrices.at(rec.movie_id);
        std::vector<bool> in_sig(static_cast<std::size_t>(x.rows()), false);
        for (int g : sc.signature_starts.at(rec.movie_id))
            for (int r = g; r < g + sc.scene_len; ++r) in_sig[static_cast<std::size_t>(r)] = true;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            if (in_sig[static_cast<std::size_t>(r)]) continue;
            auto [it, fresh] = background.emplace(theme, x.row(r));
            if (!fresh) ASSERT_EQ(it->second, x.row(r)) << rec.movie_id << " shot " << r;
        }
    }
    // Signature scenes of one theme are identical across movies.
    const auto& a = sc.matrices.at("m000");
    const auto& b = sc.matrices.at("m008");
    const int ga = sc.signature_starts.at("m000")[0], gb = sc.signature_starts.at("m008")[0];
    EXPECT_EQ(MatrixF(a.middleRows(ga, 9)), MatrixF(b.middleRows(gb, 9)));
}

TEST(Synthetic, DeterministicInSeed) {
    SyntheticOptions o;
    const auto a = generate_synthetic_corpus(o);
    const auto b = generate_synthetic_corpus(o);
    EXPECT_EQ(to_json(a.manifest), to_json(b.manifest));
    for (const auto& [id, x] : a.matrices) EXPECT_TRUE(bit_equal(x, b.matrices.at(id)));
    o.seed = 1;
    const auto c = generate_synthetic_corpus(o);
    EXPECT_FALSE(bit_equal(a.matrices.at("m000"), c.matrices.at("m000")) &&
                 a.manifest.movies[0].shot_count == c.manifest.movies[0].shot_count);
}

TEST(Synthetic, MetadataFollowsThemes) {
    const auto sc = generate_synthetic_corpus(SyntheticOptions{});
    validate_manifest(sc.manifest);
    for (const auto& rec : sc.manifest.movies) {
        const int theme = sc.theme_of.at(rec.movie_id);
        ASSERT_EQ(rec.genres.size(), 1u);
        EXPECT_EQ(rec.genres[0], sc.theme_names[static_cast<std::size_t>(theme)]);
        ASSERT_TRUE(rec.more_like_this);
        EXPECT_EQ(rec.more_like_this->size(), 4u);  // 40 movies / 8 themes, minus itself
        for (const auto& other : *rec.more_like_this) EXPECT_EQ(sc.theme_of.at(other), theme);
        const auto& sig = sc.signature_starts.at(rec.movie_id);
        ASSERT_EQ(sig.size(), 2u);
        EXPECT_GE(sig[1], sig[0] + sc.scene_len + 2);
        EXPECT_LE(sig[1] + sc.scene_len, rec.shot_count - 2);
    }
}

TEST(Synthetic, InvalidDimensionsRejected) {
    SyntheticOptions o;
    o.n_themes = 1;
    EXPECT_THROW(generate_synthetic_corpus(o), InvalidArgument);
    o = {};
    o.d_in = 4;
    EXPECT_THROW(generate_synthetic_corpus(o), InvalidArgument);
}

TEST(Synthetic, SplitsCoverEveryTheme) {
    const auto sc = generate_synthetic_corpus(SyntheticOptions{});
    const auto scenes = synthetic_labeled_scenes(sc);
    validate_labeled_scenes(sc.manifest, scenes);
    std::set<int> train, test;
    for (const auto& s : scenes) {
        if (s.task_id != "theme") continue;
        (s.split == "test" ? test : train).insert(std::get<int>(s.label));
    }
    EXPECT_EQ(train.size(), 8u);
    EXPECT_EQ(test.size(), 8u);
}

TEST(Synthetic, BoundariesAreSeparatedFromPositives) {
    const auto sc = generate_synthetic_corpus(SyntheticOptions{});
    const auto samples = synthetic_boundaries(sc, 3, 7);
    int pos = 0, neg = 0;
    for (const auto& s : samples) {
        const int shots = sc.manifest.at(s.movie_id).shot_count;
        EXPECT_GE(s.boundary, 2);
        EXPECT_LE(s.boundary + 2, shots);
        (s.label ? pos : neg) += 1;
    }
    EXPECT_EQ(pos, 40 * 4);
    EXPECT_EQ(neg, 3 * pos);
}
