#include "layoutsynth/service.hpp"

#include "httplib.h"
#include "json.hpp"
#include "layoutsynth/image_io.hpp"
#include "layoutsynth/isla.hpp"
#include "layoutsynth/layout_io.hpp"

namespace layoutsynth {
namespace {

using nlohmann::ordered_json;

std::string png_base64(const Image8& image) {
  const auto bytes = encode_png(image);
  return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

HttpResponse json_response(int status, const ordered_json& body) {
  return {status, body.dump(), "application/json"};
}

HttpResponse error_response(int status, const std::string& message, ordered_json violations) {
  ordered_json body;
  body["error"] = message;
  body["violations"] = std::move(violations);
  return json_response(status, body);
}

ordered_json mask_list(const Tensor<float>& stack, const Layout& layout,
                       const CategorySet& categories) {
  const std::size_t h = stack.dim(1), w = stack.dim(2);
  ordered_json out = ordered_json::array();
  for (std::size_t k = 0; k < stack.dim(0); ++k) {
    const auto d = stack.data().subspan(k * h * w, h * w);
    const Tensor<float> plane(Shape{h, w}, std::vector<float>(d.begin(), d.end()));
    out.push_back({{"instance", k},
                   {"label", categories.names.at(layout.boxes[k].label)},
                   {"png", png_base64(mask_to_gray(plane))}});
  }
  return out;
}

}  // namespace

SynthesisService::SynthesisService(Generator<float> generator, CategorySet categories,
                                   GeneratorOptions options)
    : generator_(std::move(generator)), categories_(std::move(categories)), options_(options) {
  if (categories_.size() != generator_.config().num_categories) {
    throw ConfigError("category set \"" + categories_.name + "\" has " +
                      std::to_string(categories_.size()) + " classes, model expects " +
                      std::to_string(generator_.config().num_categories));
  }
  generator_.params().set_requires_grad(false);
}

HttpResponse SynthesisService::synthesize(std::string_view body) const {
  LayoutDocument doc;
  try {
    doc = parse_layout(body, /*check_invariants=*/false);
  } catch (const LayoutParseError& e) {
    return error_response(400, "malformed layout",
                          ordered_json::array({{{"field", e.field()},
                                                {"line", e.line()},
                                                {"message", e.what()}}}));
  }
  if (doc.categories.name != categories_.name) {
    return error_response(
        400, "unsupported category set",
        ordered_json::array({{{"field", "categories"},
                              {"message", "server serves \"" + categories_.name + "\""}}}));
  }
  const std::size_t r = generator_.config().resolution;
  if (doc.layout.height != r || doc.layout.width != r) {
    ordered_json body_json;
    body_json["error"] = "lattice " + std::to_string(doc.layout.height) + "x" +
                         std::to_string(doc.layout.width) + " differs from model resolution " +
                         std::to_string(r) + "x" + std::to_string(r);
    body_json["resolution"] = r;
    return json_response(422, body_json);
  }
  const auto violations = validate(doc.layout, categories_.size());
  if (!violations.empty()) {
    ordered_json list = ordered_json::array();
    for (const auto& v : violations) {
      ordered_json item;
      if (v.box_index == SIZE_MAX) {
        item["box"] = nullptr;
      } else {
        item["box"] = v.box_index;
      }
      item["message"] = v.message;
      list.push_back(item);
    }
    return error_response(400, "invalid layout", list);
  }

  const Layout layout = with_background(doc.layout);
  const StyleSeeds seeds = effective_seeds(layout, doc.style.value_or(StyleSeeds{}));
  const NetworkConfig& cfg = generator_.config();
  const StyleCodes styles =
      sample_styles(layout, cfg.d_img, cfg.d_obj, seeds.seed, seeds.per_object_seeds);
  GeneratorOutput<float> out;
  {
    NoGradGuard guard;
    out = generator_.forward(std::span<const Layout>(&layout, 1),
                             std::span<const StyleCodes>(&styles, 1), options_);
  }
  ordered_json body_json;
  body_json["resolution"] = r;
  body_json["categories"] = categories_.name;
  body_json["alpha_zero"] = options_.alpha_zero;
  body_json["image"] = png_base64(tensor_to_rgb(out.images, 0));
  body_json["label_map"] = png_base64(label_map_to_rgb(out.label_images[0], r, r));
  body_json["labels"] = out.label_images[0];
  body_json["masks"] = mask_list(out.masks[0], layout, categories_);
  body_json["shape_masks"] = mask_list(out.shape_masks[0], layout, categories_);
  body_json["seeds"] = {{"seed", seeds.seed}, {"per_object_seeds", seeds.per_object_seeds}};
  return json_response(200, body_json);
}

HttpResponse SynthesisService::categories() const {
  return json_response(200, {{"name", categories_.name}, {"categories", categories_.names}});
}

HttpResponse SynthesisService::health() const {
  return json_response(200, {{"status", "ok"}, {"resolution", generator_.config().resolution}});
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const SynthesisService& service) : impl_(std::make_unique<Impl>()) {
  const auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  impl_->server.Post("/synthesize", [&service, reply](const httplib::Request& req,
                                                      httplib::Response& res) {
    reply(res, service.synthesize(req.body));
  });
  impl_->server.Get("/categories", [&service, reply](const httplib::Request&,
                                                     httplib::Response& res) {
    reply(res, service.categories());
  });
  impl_->server.Get("/health", [&service, reply](const httplib::Request&,
                                                 httplib::Response& res) {
    reply(res, service.health());
  });
  impl_->server.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          what = e.what();
        } catch (...) {
        }
        res.status = 500;
        res.set_content(ordered_json{{"error", what}}.dump(), "application/json");
      });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  if (!impl_->server.bind_to_port(host, port)) return -1;
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace layoutsynth
