#include "csdn/checkpoint.hpp"

#include "csdn/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

namespace csdn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::uint8_t kFloat32 = 1;
constexpr std::uint8_t kFloat64 = 2;

template <typename Scalar>
constexpr std::uint8_t dtype_tag()
{
    return std::is_same_v<Scalar, float> ? kFloat32 : kFloat64;
}

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary)
    {
        if (!out_)
            throw DataError("cannot write " + path.string());
    }

    template <typename T>
    void pod(T v)
    {
        out_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void tag(const char (&t)[5]) { out_.write(t, 4); }
    void str(const std::string& s)
    {
        pod(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    template <typename Scalar>
    void tensor(const Tensor<Scalar>& t)
    {
        pod(dtype_tag<Scalar>());
        pod(std::uint8_t{4});
        for (auto d : t.shape().dims())
            pod(static_cast<std::int64_t>(d));
        out_.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(Scalar)));
    }
    void finish()
    {
        out_.flush();
        if (!out_)
            throw DataError("write failed: " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary)
    {
        if (!in_)
            throw DataError("missing file: " + path.string());
    }

    void bytes(void* dst, std::size_t n)
    {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw DataError("truncated checkpoint: " + path_.string());
    }
    template <typename T>
    T pod()
    {
        T v;
        bytes(&v, sizeof v);
        return v;
    }
    std::string tag()
    {
        char t[4];
        bytes(t, 4);
        return {t, 4};
    }
    void expect(const char* t)
    {
        const std::string got = tag();
        if (got != t)
            throw DataError("corrupt checkpoint " + path_.string() + ": expected section " + t);
    }
    std::string str()
    {
        const auto n = pod<std::uint32_t>();
        if (n > 4096)
            throw DataError("corrupt checkpoint " + path_.string() + ": name too long");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    template <typename Scalar>
    Tensor<Scalar> tensor()
    {
        const auto dtype = pod<std::uint8_t>();
        const auto rank = pod<std::uint8_t>();
        if ((dtype != kFloat32 && dtype != kFloat64) || rank != 4)
            throw DataError("corrupt checkpoint " + path_.string() + ": bad tensor header");
        Shape s;
        s.n = pod<std::int64_t>();
        s.c = pod<std::int64_t>();
        s.h = pod<std::int64_t>();
        s.w = pod<std::int64_t>();
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 || s.numel() > (std::int64_t{1} << 32))
            throw DataError("corrupt checkpoint " + path_.string() + ": bad tensor dims");
        Tensor<Scalar> t(s);
        if (dtype == dtype_tag<Scalar>()) {
            bytes(t.data(), static_cast<std::size_t>(s.numel()) * sizeof(Scalar));
        } else if (dtype == kFloat32) {
            std::vector<float> raw(static_cast<std::size_t>(s.numel()));
            bytes(raw.data(), raw.size() * sizeof(float));
            for (std::size_t i = 0; i < raw.size(); ++i)
                t[static_cast<std::int64_t>(i)] = static_cast<Scalar>(raw[i]);
        } else {
            std::vector<double> raw(static_cast<std::size_t>(s.numel()));
            bytes(raw.data(), raw.size() * sizeof(double));
            for (std::size_t i = 0; i < raw.size(); ++i)
                t[static_cast<std::int64_t>(i)] = static_cast<Scalar>(raw[i]);
        }
        return t;
    }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

void write_config(Writer& w, const NetworkConfig& c)
{
    for (int v : {c.in_frames, c.num_classes, c.downsample_r})
        w.pod(static_cast<std::int32_t>(v));
    for (int v : c.shallow_channels)
        w.pod(static_cast<std::int32_t>(v));
    w.pod(static_cast<std::int32_t>(c.stem_channels));
    for (int v : c.ge_stage_channels)
        w.pod(static_cast<std::int32_t>(v));
    w.pod(static_cast<std::int32_t>(c.ge_expansion));
    for (int v : c.ge_layers)
        w.pod(static_cast<std::int32_t>(v));
    for (int v : {c.fusion_channels, c.head_channels, c.aux_channels})
        w.pod(static_cast<std::int32_t>(v));
    for (float v : {c.aux_weight, c.bn_momentum, c.bn_eps})
        w.pod(v);
}

NetworkConfig read_config(Reader& r)
{
    NetworkConfig c;
    auto i = [&] { return static_cast<int>(r.pod<std::int32_t>()); };
    c.in_frames = i();
    c.num_classes = i();
    c.downsample_r = i();
    for (int& v : c.shallow_channels)
        v = i();
    c.stem_channels = i();
    for (int& v : c.ge_stage_channels)
        v = i();
    c.ge_expansion = i();
    for (int& v : c.ge_layers)
        v = i();
    c.fusion_channels = i();
    c.head_channels = i();
    c.aux_channels = i();
    c.aux_weight = r.pod<float>();
    c.bn_momentum = r.pod<float>();
    c.bn_eps = r.pod<float>();
    try {
        c.validate();
    } catch (const UsageError& e) {
        throw DataError(std::string("checkpoint holds an invalid network config: ") + e.what());
    }
    return c;
}

} // namespace

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Network<Scalar>& net,
                     const OptimizerState<Scalar>* optimizer, const TrainerState* trainer)
{
    // Written beside the target and renamed so a crash never leaves a
    // half-written checkpoint under the final name.
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        Writer w(tmp);
        w.tag("CSDN");
        w.pod(kCheckpointVersion);
        write_config(w, net.config());
        w.tag("PARM");
        const auto& entries = net.parameters().entries();
        w.pod(static_cast<std::uint32_t>(entries.size()));
        for (const auto& [name, p] : entries) {
            w.str(name);
            w.pod(static_cast<std::uint8_t>(p.kind));
            w.tensor(p.value);
        }
        if (optimizer) {
            w.tag("OPTM");
            w.pod(optimizer->step);
            w.pod(static_cast<std::uint32_t>(optimizer->m.size()));
            for (const auto& [name, m] : optimizer->m) {
                w.str(name);
                w.tensor(m);
                w.tensor(optimizer->v.at(name));
            }
        }
        if (trainer) {
            w.tag("TRLR");
            w.pod(static_cast<std::int32_t>(trainer->epoch));
            w.pod(trainer->global_step);
            w.pod(trainer->seed);
            w.pod(trainer->best_val_dsc);
        }
        w.tag("END!");
        w.finish();
    }
    std::filesystem::rename(tmp, path);
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path)
{
    Reader r(path);
    if (r.tag() != "CSDN")
        throw DataError("not a checkpoint file (bad magic): " + path.string());
    const auto version = r.pod<std::uint16_t>();
    if (version != kCheckpointVersion)
        throw DataError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    Checkpoint<Scalar> ck;
    ck.config = read_config(r);
    r.expect("PARM");
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        const auto kind = r.pod<std::uint8_t>();
        if (kind > static_cast<std::uint8_t>(ParamKind::running_var))
            throw DataError("corrupt checkpoint: bad parameter kind for '" + name + "'");
        Tensor<Scalar> value = r.template tensor<Scalar>();
        ck.parameters.declare(name, value.shape(), static_cast<ParamKind>(kind)).value = std::move(value);
    }
    for (std::string tag = r.tag(); tag != "END!"; tag = r.tag()) {
        if (tag == "OPTM") {
            OptimizerState<Scalar> opt;
            opt.step = r.pod<std::int64_t>();
            const auto n = r.pod<std::uint32_t>();
            for (std::uint32_t i = 0; i < n; ++i) {
                const std::string name = r.str();
                opt.m.emplace(name, r.template tensor<Scalar>());
                opt.v.emplace(name, r.template tensor<Scalar>());
            }
            ck.optimizer = std::move(opt);
        } else if (tag == "TRLR") {
            TrainerState t;
            t.epoch = r.pod<std::int32_t>();
            t.global_step = r.pod<std::int64_t>();
            t.seed = r.pod<std::uint64_t>();
            t.best_val_dsc = r.pod<double>();
            ck.trainer = t;
        } else {
            throw DataError("corrupt checkpoint " + path.string() + ": unknown section '" + tag + "'");
        }
    }
    return ck;
}

template <typename Scalar>
void load_weights(Network<Scalar>& net, const ParameterStore<Scalar>& stored)
{
    auto& own = net.parameters();
    for (const auto& [name, p] : stored.entries())
        if (!own.contains(name))
            throw DataError("unknown parameter '" + name + "' in weights");
    for (auto& [name, p] : own.entries()) {
        if (!stored.contains(name))
            throw DataError("weights lack parameter '" + name + "'");
        const auto& s = stored.at(name);
        if (s.value.shape() != p.value.shape())
            throw ShapeError("parameter '" + name + "' has shape " + s.value.shape().str() + " in the weights but " +
                             p.value.shape().str() + " in the network");
    }
    for (auto& [name, p] : own.entries())
        p.value = stored.at(name).value;
}

template void save_checkpoint(const std::filesystem::path&, const Network<float>&, const OptimizerState<float>*,
                              const TrainerState*);
template void save_checkpoint(const std::filesystem::path&, const Network<double>&, const OptimizerState<double>*,
                              const TrainerState*);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);
template void load_weights(Network<float>&, const ParameterStore<float>&);
template void load_weights(Network<double>&, const ParameterStore<double>&);

} // namespace csdn
