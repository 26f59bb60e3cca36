#include "csdn/run_config.hpp"

#include "csdn/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace csdn {

void RunConfig::validate() const
{
    network.validate();
    train.validate();
    loss.validate(network.num_classes);
    if (image_size < 0 || image_size % 64 != 0)
        throw UsageError("image_size must be 0 or a positive multiple of 64");
}

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& v)
{
    T out{};
    const char* first = v.data();
    const char* last = v.data() + v.size();
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars for floating point is incomplete on older toolchains.
        std::size_t used = 0;
        double d = 0;
        try {
            d = std::stod(v, &used);
        } catch (const std::exception&) {
            throw UsageError("expected a number, got '" + v + "'");
        }
        if (used != v.size())
            throw UsageError("expected a number, got '" + v + "'");
        out = static_cast<T>(d);
    } else {
        const auto [p, ec] = std::from_chars(first, last, out);
        if (ec != std::errc() || p != last)
            throw UsageError("expected an integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& v)
{
    if (v == "true" || v == "1" || v == "on" || v == "yes")
        return true;
    if (v == "false" || v == "0" || v == "off" || v == "no")
        return false;
    throw UsageError("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v)
{
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(trim(item));
    return out;
}

std::array<int, 3> parse_triple(const std::string& v)
{
    const auto items = split_list(v);
    if (items.size() != 3)
        throw UsageError("expected three comma-separated integers, got '" + v + "'");
    return {parse_number<int>(items[0]), parse_number<int>(items[1]), parse_number<int>(items[2])};
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

template <typename T, typename Owner>
Setter number(T Owner::*field, Owner RunConfig::*owner)
{
    return [=](RunConfig& c, const std::string& v) { (c.*owner).*field = parse_number<T>(v); };
}

const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        using N = NetworkConfig;
        using T = TrainConfig;
        using L = LossConfig;
        constexpr auto net = &RunConfig::network;
        t["in_frames"] = number(&N::in_frames, net);
        t["num_classes"] = number(&N::num_classes, net);
        t["downsample_r"] = number(&N::downsample_r, net);
        t["shallow_channels"] = [](RunConfig& c, const std::string& v) { c.network.shallow_channels = parse_triple(v); };
        t["stem_channels"] = number(&N::stem_channels, net);
        t["ge_stage_channels"] = [](RunConfig& c, const std::string& v) { c.network.ge_stage_channels = parse_triple(v); };
        t["ge_expansion"] = number(&N::ge_expansion, net);
        t["ge_layers"] = [](RunConfig& c, const std::string& v) { c.network.ge_layers = parse_triple(v); };
        t["fusion_channels"] = number(&N::fusion_channels, net);
        t["head_channels"] = number(&N::head_channels, net);
        t["aux_channels"] = number(&N::aux_channels, net);
        t["bn_momentum"] = number(&N::bn_momentum, net);
        t["bn_eps"] = number(&N::bn_eps, net);
        t["aux_weight"] = [](RunConfig& c, const std::string& v) {
            c.loss.aux_weight = parse_number<double>(v);
            c.network.aux_weight = static_cast<float>(c.loss.aux_weight);
        };

        constexpr auto tr = &RunConfig::train;
        t["epochs"] = number(&T::epochs, tr);
        t["batch_size"] = number(&T::batch_size, tr);
        t["lr_step"] = number(&T::lr_step, tr);
        t["lr_factor"] = number(&T::lr_factor, tr);
        t["seed"] = number(&T::seed, tr);
        t["val_every"] = number(&T::val_every, tr);
        t["checkpoint_every"] = number(&T::checkpoint_every, tr);
        t["lr"] = [](RunConfig& c, const std::string& v) { c.train.adam.lr0 = parse_number<double>(v); };
        t["beta1"] = [](RunConfig& c, const std::string& v) { c.train.adam.beta1 = parse_number<double>(v); };
        t["beta2"] = [](RunConfig& c, const std::string& v) { c.train.adam.beta2 = parse_number<double>(v); };
        t["adam_eps"] = [](RunConfig& c, const std::string& v) { c.train.adam.eps = parse_number<double>(v); };
        t["weight_decay"] = [](RunConfig& c, const std::string& v) { c.train.adam.weight_decay = parse_number<double>(v); };
        t["decoupled_weight_decay"] = [](RunConfig& c, const std::string& v) { c.train.adam.decoupled = parse_bool(v); };
        t["augment"] = [](RunConfig& c, const std::string& v) { c.train.augment_enabled = parse_bool(v); };
        t["aug_translate"] = [](RunConfig& c, const std::string& v) { c.train.augment.translate = parse_number<double>(v); };
        t["aug_rotate_deg"] = [](RunConfig& c, const std::string& v) { c.train.augment.rotate_deg = parse_number<double>(v); };
        t["aug_scale_min"] = [](RunConfig& c, const std::string& v) { c.train.augment.scale_min = parse_number<double>(v); };
        t["aug_scale_max"] = [](RunConfig& c, const std::string& v) { c.train.augment.scale_max = parse_number<double>(v); };
        t["aug_shear_deg"] = [](RunConfig& c, const std::string& v) { c.train.augment.shear_deg = parse_number<double>(v); };
        t["aug_flip_lr_p"] = [](RunConfig& c, const std::string& v) { c.train.augment.flip_lr_p = parse_number<double>(v); };
        t["aug_flip_ud_p"] = [](RunConfig& c, const std::string& v) { c.train.augment.flip_ud_p = parse_number<double>(v); };
        t["aug_swap_p"] = [](RunConfig& c, const std::string& v) { c.train.augment.swap_p = parse_number<double>(v); };

        constexpr auto lo = &RunConfig::loss;
        t["focal_gamma"] = number(&L::focal_gamma, lo);
        t["dice_eps"] = number(&L::dice_eps, lo);
        t["focal_alpha"] = [](RunConfig& c, const std::string& v) {
            c.loss.focal_alpha.clear();
            if (!v.empty())
                for (const auto& item : split_list(v))
                    c.loss.focal_alpha.push_back(parse_number<double>(item));
        };

        t["init_seed"] = [](RunConfig& c, const std::string& v) { c.init_seed = parse_number<std::uint64_t>(v); };
        t["image_size"] = [](RunConfig& c, const std::string& v) { c.image_size = parse_number<int>(v); };
        t["data"] = [](RunConfig& c, const std::string& v) { c.data_dir = v; };
        t["out"] = [](RunConfig& c, const std::string& v) { c.out_dir = v; };
        return t;
    }();
    return table;
}

} // namespace

RunConfig parse_run_config(std::istream& in, const std::string& source)
{
    struct Item {
        std::string value;
        int line;
    };
    std::map<std::string, Item> items;
    std::string raw;
    int lineno = 0;
    auto fail = [&](int line, const std::string& why) -> UsageError {
        return UsageError(source + " line " + std::to_string(line) + ": " + why);
    };
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw fail(lineno, "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw fail(lineno, "missing key before '='");
        if (key != "preset" && !setters().contains(key))
            throw fail(lineno, "unknown key '" + key + "'");
        if (value.find('=') != std::string::npos)
            throw fail(lineno, "malformed value '" + value + "' for key '" + key + "'");
        if (!items.try_emplace(key, Item{value, lineno}).second)
            throw fail(lineno, "key '" + key + "' repeated (first set on line " +
                                   std::to_string(items.at(key).line) + ")");
    }

    RunConfig cfg;
    if (auto it = items.find("preset"); it != items.end()) {
        if (it->second.value == "reference")
            cfg.network = NetworkConfig::reference();
        else if (it->second.value == "tiny")
            cfg.network = NetworkConfig::tiny();
        else
            throw fail(it->second.line, "preset must be 'reference' or 'tiny', got '" + it->second.value + "'");
        items.erase(it);
    }
    for (const auto& [key, item] : items) {
        try {
            setters().at(key)(cfg, item.value);
        } catch (const UsageError& e) {
            throw fail(item.line, key + ": " + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const UsageError& e) {
        throw UsageError(source + ": " + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw UsageError("cannot read config " + path.string());
    return parse_run_config(f, path.string());
}

std::string format_run_config(const RunConfig& c)
{
    std::ostringstream os;
    os.precision(10);
    auto triple = [](const std::array<int, 3>& a) {
        return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
    };
    const auto& n = c.network;
    os << "in_frames = " << n.in_frames << '\n'
       << "num_classes = " << n.num_classes << '\n'
       << "downsample_r = " << n.downsample_r << '\n'
       << "shallow_channels = " << triple(n.shallow_channels) << '\n'
       << "stem_channels = " << n.stem_channels << '\n'
       << "ge_stage_channels = " << triple(n.ge_stage_channels) << '\n'
       << "ge_expansion = " << n.ge_expansion << '\n'
       << "ge_layers = " << triple(n.ge_layers) << '\n'
       << "fusion_channels = " << n.fusion_channels << '\n'
       << "head_channels = " << n.head_channels << '\n'
       << "aux_channels = " << n.aux_channels << '\n'
       << "bn_momentum = " << n.bn_momentum << '\n'
       << "bn_eps = " << n.bn_eps << '\n'
       << "aux_weight = " << c.loss.aux_weight << '\n';
    const auto& t = c.train;
    os << "epochs = " << t.epochs << '\n'
       << "batch_size = " << t.batch_size << '\n'
       << "lr = " << t.adam.lr0 << '\n'
       << "lr_step = " << t.lr_step << '\n'
       << "lr_factor = " << t.lr_factor << '\n'
       << "beta1 = " << t.adam.beta1 << '\n'
       << "beta2 = " << t.adam.beta2 << '\n'
       << "adam_eps = " << t.adam.eps << '\n'
       << "weight_decay = " << t.adam.weight_decay << '\n'
       << "decoupled_weight_decay = " << (t.adam.decoupled ? "true" : "false") << '\n'
       << "seed = " << t.seed << '\n'
       << "val_every = " << t.val_every << '\n'
       << "checkpoint_every = " << t.checkpoint_every << '\n'
       << "augment = " << (t.augment_enabled ? "true" : "false") << '\n'
       << "aug_translate = " << t.augment.translate << '\n'
       << "aug_rotate_deg = " << t.augment.rotate_deg << '\n'
       << "aug_scale_min = " << t.augment.scale_min << '\n'
       << "aug_scale_max = " << t.augment.scale_max << '\n'
       << "aug_shear_deg = " << t.augment.shear_deg << '\n'
       << "aug_flip_lr_p = " << t.augment.flip_lr_p << '\n'
       << "aug_flip_ud_p = " << t.augment.flip_ud_p << '\n'
       << "aug_swap_p = " << t.augment.swap_p << '\n';
    os << "focal_gamma = " << c.loss.focal_gamma << '\n' << "focal_alpha = ";
    for (std::size_t i = 0; i < c.loss.focal_alpha.size(); ++i)
        os << (i ? "," : "") << c.loss.focal_alpha[i];
    os << '\n' << "dice_eps = " << c.loss.dice_eps << '\n';
    os << "init_seed = " << c.init_seed << '\n' << "image_size = " << c.image_size << '\n';
    if (!c.data_dir.empty())
        os << "data = " << c.data_dir.string() << '\n';
    if (!c.out_dir.empty())
        os << "out = " << c.out_dir.string() << '\n';
    return os.str();
}

} // namespace csdn
