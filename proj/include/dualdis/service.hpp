#pragma once

// HTTP inference API over an immutable model snapshot.
//
//   GET    /health                         status, checkpoint id, uptime
//   GET    /attributes                     names and effective flip thresholds
//   PUT    /attributes/<attr>/epsilon      {"epsilon": e} override for one attribute
//   DELETE /attributes/<attr>/epsilon      back to the calibrated value
//   POST   /encode       {"image": base64 PNG}
//   POST   /reconstruct  {"image_id"} | {"image"}
//   POST   /edit         {"image_id", "attribute", "epsilon", optional "h_y"/"h_z"}
//   POST   /flip         {"image_id", "attribute"}
//   POST   /mix          {"identity_image_id", "attribute_image_id"}
//
// Routing lives in Service::handle so it can be exercised without sockets;
// bind() attaches it to an httplib server.

#include <chrono>
#include <list>
#include <mutex>
#include <unordered_map>

// Eigen goes first: httplib pulls in <resolv.h>, whose _res macro clashes
// with Eigen's parameter names.
#include "dualdis/edit.hpp"
#include "dualdis/image_io.hpp"

#include <httplib.h>
#include <json.hpp>

namespace dualdis {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Base64 (RFC 4648, padded)

inline std::string base64_encode(std::string_view in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8) | std::uint8_t(in[i + 2]);
    for (int s : {18, 12, 6, 0}) out += kAlphabet[(v >> s) & 63];
  }
  if (i + 1 == in.size()) {
    const std::uint32_t v = std::uint8_t(in[i]) << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == in.size()) {
    const std::uint32_t v = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

/// Returns nullopt on any character outside the alphabet or bad padding.
inline std::optional<std::string> base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4) return std::nullopt;
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else if (pad || (v[k] = value(c)) < 0) {
        return std::nullopt;
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out += static_cast<char>((w >> 16) & 255);
    if (pad < 2) out += static_cast<char>((w >> 8) & 255);
    if (pad < 1) out += static_cast<char>(w & 255);
  }
  return out;
}

/// FNV-1a over the 8-bit pixel values: equal images get equal ids.
inline std::string image_content_id(const Tensor<float>& img) {
  std::string bytes;
  bytes.reserve(img.size());
  for (float v : img.values()) bytes += static_cast<char>(to_byte(v));
  std::string shape = to_string(img.shape());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes, fnv1a(shape))));
  return buf;
}

// ---------------------------------------------------------------------------

struct ServiceOptions {
  std::size_t max_payload_bytes = 8u << 20;
  std::size_t cache_capacity = 4096;  // encoded images kept per snapshot
};

struct HttpRequest {
  std::string method;
  std::string path;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Loaded checkpoint: model and calibrated thresholds are immutable; the
/// latent cache and threshold overrides carry their own lock.
struct ServiceSnapshot {
  ServiceSnapshot(Model<float> m, std::string checkpoint_id, std::vector<double> eps)
      : model(std::move(m)), id(std::move(checkpoint_id)), eps_default(std::move(eps)) {
    names = model.config().attribute_names;
    if (names.empty()) names = detail::numbered_names("attr-", model.config().n_attributes);
    eps_default.resize(names.size(), 0.0);
  }

  const Model<float> model;
  const std::string id;
  std::vector<std::string> names;
  std::vector<double> eps_default;

  mutable std::mutex mu;
  mutable std::unordered_map<std::string, Latents> cache;
  mutable std::list<std::string> cache_order;
  mutable std::map<int, double> eps_override;
};

class Service {
 public:
  explicit Service(ServiceOptions opt = ServiceOptions()) : opt_(opt), started_(std::chrono::steady_clock::now()) {}

  /// Swaps in a new model; in-flight requests finish on the old snapshot.
  void load(const Checkpoint& ck, const std::string& checkpoint_id) {
    auto snap = std::make_shared<const ServiceSnapshot>(restore_model(ck), checkpoint_id, checkpoint_epsilons(ck));
    std::lock_guard lock(swap_mu_);
    snapshot_ = std::move(snap);
  }

  void load_file(const std::string& path) { load(load_checkpoint(path, true), std::filesystem::path(path).filename().string()); }

  std::shared_ptr<const ServiceSnapshot> snapshot() const {
    std::lock_guard lock(swap_mu_);
    return snapshot_;
  }

  const ServiceOptions& options() const { return opt_; }

  HttpResponse handle(const HttpRequest& req) const {
    try {
      if (req.body.size() > opt_.max_payload_bytes) return error(413, "payload of " + std::to_string(req.body.size()) + " bytes exceeds the limit");
      const auto snap = snapshot();
      if (!snap) return error(503, "no checkpoint loaded");
      const std::string& p = req.path;
      if (req.method == "GET" && p == "/health") return health(*snap);
      if (req.method == "GET" && p == "/attributes") return attributes(*snap);
      if (p.rfind("/attributes/", 0) == 0 && p.size() > 20 && p.substr(p.size() - 8) == "/epsilon") {
        const std::string attr = p.substr(12, p.size() - 20);
        if (req.method == "PUT") return set_epsilon(*snap, attr, req.body);
        if (req.method == "DELETE") return reset_epsilon(*snap, attr);
        return error(405, "use PUT or DELETE");
      }
      if (req.method != "POST") return error(404, "no route for " + req.method + " " + p);
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        return error(400, "request body is not valid JSON");
      }
      if (!body.is_object()) return error(400, "request body must be a JSON object");
      if (p == "/encode") return encode(*snap, body);
      if (p == "/reconstruct") return reconstruct_route(*snap, body);
      if (p == "/edit") return edit(*snap, body);
      if (p == "/flip") return flip_route(*snap, body);
      if (p == "/mix") return mix_route(*snap, body);
      return error(404, "no route for POST " + p);
    } catch (const HttpFailure& f) {
      return error(f.status, f.what());
    } catch (const std::exception& e) {
      return error(500, e.what());
    }
  }

  /// Routes every request of `server` through handle().
  void bind(httplib::Server& server) const {
    server.set_payload_max_length(opt_.max_payload_bytes);
    auto forward = [this](const httplib::Request& rq, httplib::Response& rs) {
      const HttpResponse r = handle({rq.method, rq.path, rq.body});
      rs.status = r.status;
      rs.set_content(r.body, r.content_type.c_str());
    };
    server.Get(".*", forward);
    server.Post(".*", forward);
    server.Put(".*", forward);
    server.Delete(".*", forward);
  }

  /// Flip thresholds after overrides.
  static std::vector<double> effective_epsilons(const ServiceSnapshot& s) {
    std::vector<double> eps = s.eps_default;
    std::lock_guard lock(s.mu);
    for (const auto& [i, v] : s.eps_override) eps[i] = v;
    return eps;
  }

 private:
  struct HttpFailure : Error {
    HttpFailure(int s, const std::string& m) : Error(m), status(s) {}
    int status;
  };

  static HttpResponse error(int status, const std::string& message) {
    return {status, json{{"error", message}}.dump()};
  }

  static HttpResponse ok(const json& j) { return {200, j.dump()}; }

  static json floats(const Tensor<float>& t, int row) {
    const int w = t.dim(1);
    return json(std::vector<float>(t.data() + static_cast<std::size_t>(row) * w, t.data() + static_cast<std::size_t>(row + 1) * w));
  }

  static std::vector<float> sigmoid_row(const Tensor<float>& logits) {
    std::vector<float> out;
    for (float v : logits.values()) out.push_back(static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))));
    return out;
  }

  static std::vector<float> softmax_row(const Tensor<float>& logits) {
    std::vector<float> out(logits.values().begin(), logits.values().end());
    const float m = *std::max_element(out.begin(), out.end());
    double s = 0;
    for (float& v : out) s += (v = std::exp(v - m));
    for (float& v : out) v = static_cast<float>(v / s);
    return out;
  }

  static int attribute_index(const ServiceSnapshot& s, const json& v) {
    if (v.is_number_integer()) {
      const int i = v.get<int>();
      if (i >= 0 && i < static_cast<int>(s.names.size())) return i;
    } else if (v.is_string()) {
      return attribute_index(s, v.get<std::string>());
    }
    throw HttpFailure(422, "unknown attribute " + v.dump());
  }

  static int attribute_index(const ServiceSnapshot& s, const std::string& name) {
    for (std::size_t i = 0; i < s.names.size(); ++i)
      if (s.names[i] == name) return static_cast<int>(i);
    int i = -1;
    const auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), i);
    if (ec == std::errc() && ptr == name.data() + name.size() && i >= 0 && i < static_cast<int>(s.names.size())) return i;
    throw HttpFailure(422, "unknown attribute '" + name + "'");
  }

  static const json& field(const json& body, const char* key) {
    if (!body.contains(key)) throw HttpFailure(400, std::string("missing field '") + key + "'");
    return body.at(key);
  }

  Tensor<float> decode_image_field(const ServiceSnapshot& s, const json& body) const {
    const json& f = field(body, "image");
    if (!f.is_string()) throw HttpFailure(400, "'image' must be a base64 string");
    const auto bytes = base64_decode(f.get<std::string>());
    if (!bytes) throw HttpFailure(400, "'image' is not valid base64");
    Tensor<float> img;
    try {
      img = decode_png(*bytes, s.model.config().channels);
    } catch (const ImageError& e) {
      throw HttpFailure(400, e.what());
    }
    if (img.shape() != s.model.config().image_shape()) {
      throw HttpFailure(400, "image is " + to_string(img.shape()) + ", the model expects " + to_string(s.model.config().image_shape()));
    }
    return img;
  }

  void remember(const ServiceSnapshot& s, const std::string& id, const Latents& h) const {
    std::lock_guard lock(s.mu);
    if (s.cache.count(id)) return;
    s.cache.emplace(id, h);
    s.cache_order.push_back(id);
    while (s.cache.size() > opt_.cache_capacity) {
      s.cache.erase(s.cache_order.front());
      s.cache_order.pop_front();
    }
  }

  static Latents lookup(const ServiceSnapshot& s, const json& body, const char* key) {
    const json& f = field(body, key);
    if (!f.is_string()) throw HttpFailure(400, std::string("'") + key + "' must be a string");
    std::lock_guard lock(s.mu);
    const auto it = s.cache.find(f.get<std::string>());
    if (it == s.cache.end()) throw HttpFailure(404, "unknown image id '" + f.get<std::string>() + "'");
    return it->second;
  }

  /// Latents from an id, an inline image, or client-held latent arrays.
  Latents latents_from(const ServiceSnapshot& s, const json& body) const {
    if (body.contains("h_y") && body.contains("h_z")) {
      auto read = [&](const char* key, int width) {
        const json& a = body.at(key);
        if (!a.is_array() || static_cast<int>(a.size()) != width) {
          throw HttpFailure(400, std::string("'") + key + "' must be an array of " + std::to_string(width) + " numbers");
        }
        std::vector<float> v;
        for (const auto& x : a) {
          if (!x.is_number()) throw HttpFailure(400, std::string("'") + key + "' must hold numbers");
          v.push_back(x.get<float>());
        }
        return Tensor<float>({1, width}, std::move(v));
      };
      return {read("h_y", s.model.dim_hy()), read("h_z", s.model.dim_hz())};
    }
    if (body.contains("image_id")) return lookup(s, body, "image_id");
    const Tensor<float> img = decode_image_field(s, body);
    const Latents h = encode_images(s.model, img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}));
    remember(s, image_content_id(img), h);
    return h;
  }

  static std::string png_of(const Tensor<float>& batch) {
    const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    return base64_encode(encode_png(batch.reshaped({C, H, W})));
  }

  /// Predictions for an output image after re-encoding it.
  static json audit(const ServiceSnapshot& s, const Tensor<float>& image) {
    const Latents h = encode_images(s.model, image);
    Tape<float> tape(false);
    const Tensor<float> yl = s.model.y_logits(tape.constant(h.h_y)).value();
    const std::vector<float> yp = softmax_row(yl);
    return {{"y", static_cast<int>(std::max_element(yp.begin(), yp.end()) - yp.begin())},
            {"y_prob", yp},
            {"z_prob", sigmoid_row(attribute_logits(s.model, h.h_z))}};
  }

  void require_editable_model(const ServiceSnapshot& s) const {
    const VariantSwitches& sw = s.model.switches();
    if (!sw.decoder || !sw.z_branch) throw HttpFailure(422, std::string("variant ") + to_string(s.model.config().variant) + " cannot edit images");
  }

  HttpResponse health(const ServiceSnapshot& s) const {
    const double up = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    return ok({{"status", "ok"}, {"checkpoint", s.id}, {"variant", to_string(s.model.config().variant)}, {"uptime_seconds", up}});
  }

  HttpResponse attributes(const ServiceSnapshot& s) const {
    json overrides = json::object();
    {
      std::lock_guard lock(s.mu);
      for (const auto& [i, v] : s.eps_override) overrides[s.names[i]] = v;
    }
    return ok({{"names", s.names}, {"epsilon", effective_epsilons(s)}, {"epsilon_default", s.eps_default}, {"overrides", overrides}});
  }

  HttpResponse set_epsilon(const ServiceSnapshot& s, const std::string& attr, const std::string& raw) const {
    const int i = attribute_index(s, attr);
    json body;
    try {
      body = json::parse(raw);
    } catch (const json::exception&) {
      return error(400, "request body is not valid JSON");
    }
    if (!body.is_object() || !body.contains("epsilon") || !body["epsilon"].is_number()) return error(400, "expected {\"epsilon\": number}");
    const double e = body["epsilon"].get<double>();
    if (!(e > 0) || !std::isfinite(e)) return error(422, "epsilon must be a positive finite number");
    {
      std::lock_guard lock(s.mu);
      s.eps_override[i] = e;
    }
    return attributes(s);
  }

  HttpResponse reset_epsilon(const ServiceSnapshot& s, const std::string& attr) const {
    const int i = attribute_index(s, attr);
    {
      std::lock_guard lock(s.mu);
      s.eps_override.erase(i);
    }
    return attributes(s);
  }

  HttpResponse encode(const ServiceSnapshot& s, const json& body) const {
    const Tensor<float> img = decode_image_field(s, body);
    const std::string id = image_content_id(img);
    const Tensor<float> batch = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    const ModelOutputs o = model_outputs(s.model, batch);
    remember(s, id, {o.h_y, o.h_z});
    json j = {{"image_id", id}, {"h_y", floats(o.h_y, 0)}, {"y_prob", softmax_row(o.y_logits)}};
    if (s.model.switches().z_branch) {
      j["h_z"] = floats(o.h_z, 0);
      j["z_prob"] = sigmoid_row(o.z_logits);
    }
    return ok(j);
  }

  HttpResponse reconstruct_route(const ServiceSnapshot& s, const json& body) const {
    require_editable_model(s);
    const Latents h = latents_from(s, body);
    const Tensor<float> img = decode_latents(s.model, h.h_y, h.h_z);
    return ok({{"image", png_of(img)}, {"z_prob", sigmoid_row(attribute_logits(s.model, h.h_z))}});
  }

  HttpResponse edit(const ServiceSnapshot& s, const json& body) const {
    require_editable_model(s);
    const int attr = attribute_index(s, field(body, "attribute"));
    const json& e = field(body, "epsilon");
    if (!e.is_number()) return error(400, "'epsilon' must be a number");
    const Latents h = latents_from(s, body);
    const EditResult r = slide(s.model, h, attr, e.get<double>());
    return ok({{"image", png_of(r.images)},
               {"attribute", s.names[attr]},
               {"epsilon", e.get<double>()},
               {"z_prob", sigmoid_row(attribute_logits(s.model, r.h_z))},
               {"h_y", floats(h.h_y, 0)},
               {"h_z", floats(r.h_z, 0)},
               {"audit", audit(s, r.images)}});
  }

  HttpResponse flip_route(const ServiceSnapshot& s, const json& body) const {
    require_editable_model(s);
    const int attr = attribute_index(s, field(body, "attribute"));
    const double eps = effective_epsilons(s)[attr];
    if (!(eps > 0)) return error(422, "attribute '" + s.names[attr] + "' has no flip threshold; PUT one first");
    const Latents h = latents_from(s, body);
    const EditResult r = flip(s.model, h, attr, eps);
    return ok({{"image", png_of(r.images)},
               {"attribute", s.names[attr]},
               {"epsilon", eps},
               {"z_prob", sigmoid_row(attribute_logits(s.model, r.h_z))},
               {"audit", audit(s, r.images)}});
  }

  HttpResponse mix_route(const ServiceSnapshot& s, const json& body) const {
    require_editable_model(s);
    const Latents a = lookup(s, body, "identity_image_id");
    const Latents b = lookup(s, body, "attribute_image_id");
    const Tensor<float> img = decode_latents(s.model, a.h_y, b.h_z);
    return ok({{"image", png_of(img)}, {"audit", audit(s, img)}});
  }

  ServiceOptions opt_;
  std::chrono::steady_clock::time_point started_;
  mutable std::mutex swap_mu_;
  std::shared_ptr<const ServiceSnapshot> snapshot_;
};

}  // namespace dualdis
