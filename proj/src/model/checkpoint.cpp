#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cryda/model.hpp"

namespace cryda::model {

namespace {

constexpr char kMagic[4] = {'C', 'R', 'Y', 'D'};
constexpr std::uint32_t kVersion = 1;

class Writer {
  public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw IoError("cannot open checkpoint for writing: " + path);
    }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), std::streamsize(n)); }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = (unsigned char)(v >> (8 * i));
        bytes(b, 4);
    }
    void u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
        bytes(b, 8);
    }
    void f32(float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void str(const std::string& s) {
        u32(std::uint32_t(s.size()));
        bytes(s.data(), s.size());
    }
    void floats(const std::vector<float>& v) {
        u64(v.size());
        for (float x : v) f32(x);
    }
    void close() {
        out_.flush();
        if (!out_) throw IoError("failed writing checkpoint: " + path_);
    }

  private:
    std::ofstream out_;
    std::string path_;
};

class Reader {
  public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw IoError("cannot open checkpoint: " + path);
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), std::streamsize(n));
        if (std::size_t(in_.gcount()) != n) throw IoError("truncated checkpoint: " + path_);
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        unsigned char b[8];
        bytes(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > (1u << 20)) throw IoError("corrupt checkpoint string length: " + path_);
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    std::vector<float> floats() {
        const std::uint64_t n = u64();
        if (n > (1ull << 32)) throw IoError("corrupt checkpoint array length: " + path_);
        std::vector<float> v(std::size_t(n), 0.0f);
        for (auto& x : v) x = f32();
        return v;
    }

  private:
    std::ifstream in_;
    std::string path_;
};

void write_tensor(Writer& w, const ad::Tensor& t) {
    w.u32(std::uint32_t(t.shape.size()));
    for (int d : t.shape) w.u32(std::uint32_t(d));
    w.floats(t.data);
}

ad::Tensor read_tensor(Reader& r, const std::string& path) {
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError("corrupt checkpoint tensor rank: " + path);
    ad::Shape shape(std::size_t(rank), 0);
    for (auto& d : shape) d = int(r.u32());
    std::vector<float> data = r.floats();
    if (std::int64_t(data.size()) != ad::numel(shape))
        throw IoError("corrupt checkpoint tensor payload: " + path);
    return ad::Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(kVersion);

    w.u32(std::uint32_t(state.cfg.in_channels));
    w.u32(std::uint32_t(state.cfg.channels.size()));
    for (int c : state.cfg.channels) w.u32(std::uint32_t(c));
    w.u32(std::uint32_t(state.cfg.kernel));
    w.u32(std::uint32_t(state.cfg.n_mels));
    w.u32(std::uint32_t(state.cfg.embedding_dim));
    w.u32(std::uint32_t(state.n_classes));
    w.u32(std::uint32_t(state.heads.size()));
    w.u32(std::uint32_t(state.bn_policy));
    w.u64(std::uint64_t(state.step));

    ModelState& mut = const_cast<ModelState&>(state);
    const auto params = mut.params();
    w.u32(std::uint32_t(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        write_tensor(w, *p.tensor);
    }

    w.u32(std::uint32_t(state.bn.size()));
    for (const ad::BNState& b : state.bn) {
        w.f32(b.momentum);
        w.f32(b.eps);
        w.floats(b.run_mean);
        w.floats(b.run_var);
    }

    w.u32(std::uint32_t(state.frozen.size()));
    for (const std::string& name : state.frozen) w.str(name);

    w.u32(std::uint32_t(state.opt.size()));
    for (const auto& [name, mo] : state.opt) {
        w.str(name);
        w.floats(mo.m);
        w.floats(mo.v);
    }
    w.close();
}

ModelState load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("checkpoint version mismatch in " + path + ": file has " +
                      std::to_string(version) + ", supported is " + std::to_string(kVersion));

    ModelState s;
    s.cfg.in_channels = int(r.u32());
    const std::uint32_t n_blocks = r.u32();
    if (n_blocks > 64) throw IoError("corrupt checkpoint block count: " + path);
    s.cfg.channels.resize(n_blocks);
    for (auto& c : s.cfg.channels) c = int(r.u32());
    s.cfg.kernel = int(r.u32());
    s.cfg.n_mels = int(r.u32());
    s.cfg.embedding_dim = int(r.u32());
    s.n_classes = int(r.u32());
    const std::uint32_t n_heads = r.u32();
    const std::uint32_t policy = r.u32();
    if (policy > 2) throw IoError("corrupt checkpoint bn policy: " + path);
    s.bn_policy = BnPolicy(policy);
    s.step = std::int64_t(r.u64());

    s.conv_w.resize(n_blocks);
    s.bn.resize(n_blocks);
    for (std::size_t i = 0; i < n_blocks; ++i) s.bn[i] = ad::BNState::init(s.cfg.channels[i]);
    s.heads.resize(n_heads);

    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        ad::Tensor t = read_tensor(r, path);
        bool placed = false;
        for (std::size_t b = 0; b < n_blocks && !placed; ++b) {
            const std::string bs = std::to_string(b);
            if (name == "conv" + bs + ".w") {
                s.conv_w[b] = std::move(t);
                placed = true;
            } else if (name == "bn" + bs + ".gamma") {
                s.bn[b].gamma = std::move(t);
                placed = true;
            } else if (name == "bn" + bs + ".beta") {
                s.bn[b].beta = std::move(t);
                placed = true;
            }
        }
        for (std::size_t h = 0; h < n_heads && !placed; ++h) {
            const std::string hs = std::to_string(h);
            if (name == "head" + hs + ".w") {
                s.heads[h].w = std::move(t);
                placed = true;
            } else if (name == "head" + hs + ".b") {
                s.heads[h].b = std::move(t);
                placed = true;
            }
        }
        if (!placed) throw IoError("checkpoint parameter does not fit the model: " + name);
    }

    const std::uint32_t n_bn = r.u32();
    if (n_bn != n_blocks) throw IoError("corrupt checkpoint bn section: " + path);
    for (std::size_t i = 0; i < n_blocks; ++i) {
        s.bn[i].momentum = r.f32();
        s.bn[i].eps = r.f32();
        s.bn[i].run_mean = r.floats();
        s.bn[i].run_var = r.floats();
        if (int(s.bn[i].run_mean.size()) != s.cfg.channels[i] ||
            int(s.bn[i].run_var.size()) != s.cfg.channels[i])
            throw IoError("corrupt checkpoint bn stats: " + path);
    }

    const std::uint32_t n_frozen = r.u32();
    for (std::uint32_t i = 0; i < n_frozen; ++i) s.frozen.insert(r.str());

    const std::uint32_t n_opt = r.u32();
    for (std::uint32_t i = 0; i < n_opt; ++i) {
        const std::string name = r.str();
        ModelState::Moments mo;
        mo.m = r.floats();
        mo.v = r.floats();
        s.opt[name] = std::move(mo);
    }

    s.apply_freeze();
    return s;
}

}  // namespace cryda::model
