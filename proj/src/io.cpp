#include "amer/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "amer/error.hpp"

namespace amer {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace {

constexpr uint32_t kVersion = 1;

struct Writer {
    std::string buf;

    void bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void i64(int64_t v) { bytes(&v, 8); }
    void f32v(f32 v) { bytes(&v, 4); }
    void f64v(f64 v) { bytes(&v, 8); }
    void str(std::string_view s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    void f32s(std::span<const f32> xs) { bytes(xs.data(), xs.size() * 4); }
};

struct Reader {
    std::string_view buf;
    size_t off = 0;
    std::string path;

    void need(size_t n) {
        require(off + n <= buf.size(), Errc::Io, "truncated file: " + path);
    }
    void bytes(void* p, size_t n) {
        need(n);
        std::memcpy(p, buf.data() + off, n);
        off += n;
    }
    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        bytes(&v, 8);
        return v;
    }
    int64_t i64() {
        int64_t v;
        bytes(&v, 8);
        return v;
    }
    f32 f32v() {
        f32 v;
        bytes(&v, 4);
        return v;
    }
    f64 f64v() {
        f64 v;
        bytes(&v, 8);
        return v;
    }
    std::string str() {
        uint64_t n = u64();
        require(n <= buf.size() - off, Errc::Io, "truncated string in " + path);
        std::string s(buf.data() + off, n);
        off += n;
        return s;
    }
    void f32s(f32* dst, size_t n) { bytes(dst, n * 4); }
    void magic(std::string_view m) {
        need(m.size());
        require(buf.substr(off, m.size()) == m, Errc::Io, "bad magic in " + path);
        off += m.size();
    }
    void version() {
        uint32_t v = u32();
        require(v == kVersion, Errc::Io,
                "unsupported version " + std::to_string(v) + " in " + path);
    }
    void done() { require(off == buf.size(), Errc::Io, "trailing bytes in " + path); }
};

Reader open_reader(const std::string& path, std::string& storage) {
    storage = read_text_file(path);
    return Reader{storage, 0, path};
}

void put_mat(Writer& w, const Mat& m) {
    w.u32(uint32_t(m.rows));
    w.u32(uint32_t(m.cols));
    w.f32s(m.data);
}

Mat get_mat(Reader& r) {
    uint32_t rows = r.u32();
    uint32_t cols = r.u32();
    require(uint64_t(rows) * cols <= (1ull << 32), Errc::Io, "oversized tensor in " + r.path);
    Mat m(static_cast<int>(rows), static_cast<int>(cols));
    r.f32s(m.data.data(), m.data.size());
    return m;
}

}  // namespace

void atomic_write(const std::string& path, std::string_view bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), Errc::Io, "cannot open for write: " + tmp);
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        require(out.good(), Errc::Io, "write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    require(!ec, Errc::Io, "rename failed: " + tmp + " -> " + path);
}

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

uint64_t digest_file(const std::string& path) { return fnv1a64(read_text_file(path)); }

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::Io, "cannot open: " + path);
    std::string out;
    in.seekg(0, std::ios::end);
    out.resize(size_t(in.tellg()));
    in.seekg(0);
    in.read(out.data(), std::streamsize(out.size()));
    require(in.good() || in.eof(), Errc::Io, "read failed: " + path);
    return out;
}

// --- datasets --------------------------------------------------------------

std::string dataset_filename(Split split) {
    switch (split) {
        case Split::Train: return "train.bin";
        case Split::Val: return "val.bin";
        case Split::Test: return "test.bin";
    }
    fail(Errc::InvalidConfig, "dataset_filename: bad split");
}

void write_dataset_split(const std::string& path, const SyntheticDataset& ds, Split split) {
    const auto& records = ds.split(split);
    Writer w;
    w.bytes("AMER", 4);
    w.u32(kVersion);
    w.u32(uint32_t(ds.d));
    w.u32(uint32_t(ds.m));
    w.u64(records.size());
    w.u8(uint8_t(ds.setting));
    w.u8(uint8_t(ds.tkind));
    w.u8(uint8_t(split));
    w.u64(ds.seed);
    for (const Record& r : records) {
        require(int(r.input.size()) == ds.d, Errc::DimMismatch, "write_dataset: input size");
        require(int(r.targets_raw.size()) == ds.m && int(r.target_ids.size()) == ds.m,
                Errc::CountMismatch, "write_dataset: target count");
        w.f32s(r.input);
        for (int j = 0; j < ds.m; ++j) {
            w.f32s(r.targets_raw[size_t(j)]);
            w.u64(r.target_ids[size_t(j)]);
        }
    }
    atomic_write(path, w.buf);
}

void read_dataset_split(const std::string& path, SyntheticDataset& ds, Split split) {
    std::string storage;
    Reader r = open_reader(path, storage);
    r.magic("AMER");
    r.version();
    const int d = int(r.u32());
    const int m = int(r.u32());
    const uint64_t n = r.u64();
    const auto setting = Setting(r.u8());
    const auto tkind = TransformKind(r.u8());
    const auto file_split = Split(r.u8());
    const uint64_t seed = r.u64();
    require(d >= 1 && m >= 1, Errc::Io, "bad dataset header in " + path);
    require(file_split == split, Errc::Io, "split byte mismatch in " + path);
    if (ds.d == 0 && ds.m == 0) {
        ds.d = d;
        ds.m = m;
        ds.setting = setting;
        ds.tkind = tkind;
        ds.seed = seed;
    } else {
        require(ds.d == d && ds.m == m && ds.setting == setting && ds.tkind == tkind &&
                    ds.seed == seed,
                Errc::Io, "dataset header mismatch across splits: " + path);
    }
    auto& dest = split == Split::Train ? ds.train : (split == Split::Val ? ds.val : ds.test);
    dest.clear();
    dest.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        Record rec;
        rec.input.resize(size_t(d));
        r.f32s(rec.input.data(), rec.input.size());
        rec.targets_raw.assign(size_t(m), Vec(size_t(d)));
        rec.target_ids.resize(size_t(m));
        for (int j = 0; j < m; ++j) {
            r.f32s(rec.targets_raw[size_t(j)].data(), size_t(d));
            rec.target_ids[size_t(j)] = r.u64();
        }
        dest.push_back(std::move(rec));
    }
    r.done();
}

SyntheticDataset read_dataset_dir(const std::string& dir) {
    SyntheticDataset ds;
    for (Split s : {Split::Train, Split::Val, Split::Test})
        read_dataset_split(dir + "/" + dataset_filename(s), ds, s);
    return ds;
}

// --- corpus ----------------------------------------------------------------

void write_corpus(const std::string& path, const Corpus& corpus) {
    Writer w;
    w.bytes("AMERCORP", 8);
    w.u32(kVersion);
    w.u32(uint32_t(corpus.d));
    w.u64(corpus.size());
    w.f32s(corpus.data);
    for (const auto& p : corpus.prov) {
        w.u8(p.tag);
        w.u64(p.query);
        w.u8(p.slot);
    }
    atomic_write(path, w.buf);
}

Corpus read_corpus(const std::string& path) {
    std::string storage;
    Reader r = open_reader(path, storage);
    r.magic("AMERCORP");
    r.version();
    Corpus c;
    c.d = int(r.u32());
    const uint64_t n = r.u64();
    require(c.d >= 1, Errc::Io, "bad corpus header in " + path);
    c.data.resize(size_t(n) * size_t(c.d));
    r.f32s(c.data.data(), c.data.size());
    c.prov.resize(n);
    for (auto& p : c.prov) {
        p.tag = r.u8();
        p.query = r.u64();
        p.slot = r.u8();
    }
    r.done();
    return c;
}

// --- transforms ------------------------------------------------------------

void write_transforms(const std::string& path, std::span<const TransformSpec> transforms) {
    require(!transforms.empty(), Errc::CountMismatch, "write_transforms: empty list");
    Writer w;
    w.bytes("AMERXFRM", 8);
    w.u32(kVersion);
    w.u8(uint8_t(transforms.front().kind));
    w.u32(uint32_t(transforms.front().w1.cols));
    w.u32(uint32_t(transforms.size()));
    for (const auto& t : transforms) {
        w.u32(uint32_t(t.index));
        put_mat(w, t.w1);
        put_mat(w, t.w2);
    }
    atomic_write(path, w.buf);
}

std::vector<TransformSpec> read_transforms(const std::string& path) {
    std::string storage;
    Reader r = open_reader(path, storage);
    r.magic("AMERXFRM");
    r.version();
    const auto kind = TransformKind(r.u8());
    r.u32();  // d, implied by the matrices
    const uint32_t count = r.u32();
    std::vector<TransformSpec> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        TransformSpec t;
        t.kind = kind;
        t.index = int(r.u32());
        t.w1 = get_mat(r);
        t.w2 = get_mat(r);
        out.push_back(std::move(t));
    }
    r.done();
    return out;
}

// --- checkpoints -----------------------------------------------------------

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    Writer w;
    w.bytes("AMERCKPT", 8);
    w.u32(kVersion);
    w.u32(uint32_t(ckpt.cfg.d));
    w.u32(uint32_t(ckpt.cfg.m));
    w.u32(uint32_t(ckpt.cfg.hidden));
    w.u32(uint32_t(ckpt.cfg.layers));
    w.u32(uint32_t(ckpt.cfg.heads));
    w.u32(uint32_t(ckpt.cfg.mlp_hidden));
    w.u8(ckpt.cfg.use_bias ? 1 : 0);
    w.u8(ckpt.cfg.detach_feedback ? 1 : 0);
    w.i64(ckpt.step);
    w.i64(ckpt.best_step);
    w.f64v(ckpt.best_val);
    w.str(ckpt.config_text);
    w.u32(uint32_t(ckpt.tensors.size()));
    for (const auto& [name, mat] : ckpt.tensors) {
        w.str(name);
        put_mat(w, mat);
    }
    atomic_write(path, w.buf);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::string storage;
    Reader r = open_reader(path, storage);
    r.magic("AMERCKPT");
    r.version();
    Checkpoint c;
    c.cfg.d = int(r.u32());
    c.cfg.m = int(r.u32());
    c.cfg.hidden = int(r.u32());
    c.cfg.layers = int(r.u32());
    c.cfg.heads = int(r.u32());
    c.cfg.mlp_hidden = int(r.u32());
    c.cfg.use_bias = r.u8() != 0;
    c.cfg.detach_feedback = r.u8() != 0;
    c.step = r.i64();
    c.best_step = r.i64();
    c.best_val = r.f64v();
    c.config_text = r.str();
    const uint32_t n = r.u32();
    c.tensors.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        c.tensors.emplace_back(std::move(name), get_mat(r));
    }
    r.done();
    return c;
}

Checkpoint checkpoint_of(const TrainResult& result, const ModelConfig& mcfg,
                         const std::string& config_text, int64_t step) {
    Checkpoint c;
    c.cfg = mcfg;
    c.step = step;
    c.best_step = result.best_step;
    c.best_val = result.best_val;
    c.config_text = config_text;
    auto to_mat = [](const TMat<f32>& t) {
        Mat m(t.rows, t.cols);
        m.data = t.data;
        return m;
    };
    const auto& names = result.model.names;
    for (size_t i = 0; i < names.size(); ++i)
        c.tensors.emplace_back(names[i], to_mat(result.model.params[i]));
    for (size_t i = 0; i < names.size(); ++i)
        c.tensors.emplace_back("adam_m/" + names[i], to_mat(result.adam.m[i]));
    for (size_t i = 0; i < names.size(); ++i)
        c.tensors.emplace_back("adam_v/" + names[i], to_mat(result.adam.v[i]));
    for (size_t i = 0; i < names.size(); ++i)
        c.tensors.emplace_back("best/" + names[i], to_mat(result.best.params[i]));
    return c;
}

Model<f32> model_from_checkpoint(const Checkpoint& ckpt, bool best) {
    Model<f32> model(ckpt.cfg);
    auto find = [&](const std::string& name) -> const Mat* {
        for (const auto& [n, m] : ckpt.tensors)
            if (n == name) return &m;
        return nullptr;
    };
    bool have_best = best;
    if (best) {
        for (const auto& name : model.names)
            have_best = have_best && find("best/" + name) != nullptr;
    }
    for (size_t i = 0; i < model.names.size(); ++i) {
        const std::string& name = model.names[i];
        const Mat* src = find(have_best ? "best/" + name : name);
        require(src != nullptr, Errc::Io, "checkpoint missing tensor: " + name);
        TMat<f32>& dst = model.params[i];
        require(src->rows == dst.rows && src->cols == dst.cols, Errc::Io,
                "checkpoint tensor shape mismatch: " + name);
        dst.data = src->data;
    }
    return model;
}

// --- text artifacts --------------------------------------------------------

namespace {

std::string fmt_or_empty(f64 v) {
    if (!std::isfinite(v)) return "";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void write_train_log(const std::string& path, std::span<const LogRow> log) {
    std::string out = "step,loss,val_loss,lr,p\n";
    char buf[64];
    for (const LogRow& r : log) {
        out += std::to_string(r.step);
        out += ',';
        out += fmt_or_empty(r.loss);
        out += ',';
        out += fmt_or_empty(r.val_loss);
        out += ',';
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", r.lr, r.p);
        out += buf;
    }
    atomic_write(path, out);
}

void write_run(const std::string& path, std::span<const uint64_t> query_ids,
               const std::vector<std::vector<SearchHit>>& hits) {
    require(query_ids.size() == hits.size(), Errc::CountMismatch,
            "write_run: one id per query required");
    std::string out;
    char buf[96];
    for (size_t q = 0; q < hits.size(); ++q) {
        int rank = 1;
        for (const SearchHit& h : hits[q]) {
            std::snprintf(buf, sizeof(buf), "%llu %llu %d %.6f\n",
                          static_cast<unsigned long long>(query_ids[q]),
                          static_cast<unsigned long long>(h.id), rank, f64(h.score));
            out += buf;
            ++rank;
        }
    }
    atomic_write(path, out);
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

uint64_t parse_id(const std::string& s, const std::string& what) {
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && p == s.data() + s.size(), Errc::Io,
            what + ": expected an integer, got '" + s + "'");
    return v;
}

}  // namespace

RunFile read_run(const std::string& path) {
    const std::string text = read_text_file(path);
    RunFile out;
    size_t pos = 0;
    size_t line_no = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        const auto parts = split_ws(line);
        if (parts.empty()) continue;
        require(parts.size() == 4, Errc::Io,
                "run file line " + std::to_string(line_no) +
                    ": expected query_id doc_id rank score");
        const uint64_t qid = parse_id(parts[0], "run file");
        const uint64_t did = parse_id(parts[1], "run file");
        const uint64_t rank = parse_id(parts[2], "run file");
        const f64 score = std::strtod(parts[3].c_str(), nullptr);
        if (out.query_ids.empty() || out.query_ids.back() != qid) {
            for (uint64_t seen : out.query_ids)
                require(seen != qid, Errc::Io,
                        "run file: query " + parts[0] + " appears in two blocks");
            out.query_ids.push_back(qid);
            out.hits.emplace_back();
        }
        require(rank == out.hits.back().size() + 1, Errc::Io,
                "run file line " + std::to_string(line_no) + ": ranks must be consecutive");
        out.hits.back().push_back({did, f32(score)});
    }
    return out;
}

TargetsFile read_targets(const std::string& path) {
    const std::string text = read_text_file(path);
    TargetsFile out;
    size_t pos = 0;
    size_t line_no = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        const auto parts = split_ws(line);
        if (parts.empty()) continue;
        require(parts.size() >= 2, Errc::Io,
                "targets file line " + std::to_string(line_no) +
                    ": expected query_id m target_id...");
        const uint64_t qid = parse_id(parts[0], "targets file");
        const uint64_t m = parse_id(parts[1], "targets file");
        require(parts.size() == 2 + m, Errc::CountMismatch,
                "targets file line " + std::to_string(line_no) + ": expected " +
                    std::to_string(m) + " target ids");
        std::vector<uint64_t> ids;
        for (size_t i = 2; i < parts.size(); ++i)
            ids.push_back(parse_id(parts[i], "targets file"));
        out.query_ids.push_back(qid);
        out.targets.push_back(std::move(ids));
    }
    return out;
}

void write_manifest(const std::string& path,
                    std::span<const std::pair<std::string, std::string>> files) {
    std::string out = "format = amer-manifest-1\n";
    for (const auto& [name, file] : files) {
        const std::string content = read_text_file(file);
        out += "digest." + name + " = " + hex64(fnv1a64(content)) + "\n";
        out += "bytes." + name + " = " + std::to_string(content.size()) + "\n";
    }
    atomic_write(path, out);
}

}  // namespace amer
