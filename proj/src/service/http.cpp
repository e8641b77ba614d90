#include <httplib.h>

#include "ddimedit/errors.hpp"
#include "ddimedit/service.hpp"

namespace ddimedit {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                const std::string& hint = {}, const std::string& key = {}) {
    json e{{"kind", kind}, {"message", message}};
    if (!hint.empty()) e["hint"] = hint;
    if (!key.empty()) e["key"] = key;
    send_json(res, status, json{{"error", e}});
}

template <class F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const ServiceError& e) {
            if (e.retry_after_s > 0) res.set_header("Retry-After", std::to_string(e.retry_after_s));
            send_error(res, e.http_status(), e.kind(), e.what(), e.hint());
        } catch (const ConfigError& e) {
            send_error(res, 400, e.kind(), e.what(), {}, e.key());
        } catch (const NotFoundError& e) {
            send_error(res, 404, e.kind(), e.what());
        } catch (const CacheMissError& e) {
            send_error(res, 409, e.kind(), e.what());
        } catch (const ContractError& e) {
            send_error(res, 400, e.kind(), e.what());
        } catch (const InputFormatError& e) {
            send_error(res, 400, e.kind(), e.what());
        } catch (const Error& e) {
            send_error(res, 500, e.kind(), e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    };
}

std::optional<std::string> form_text(const httplib::Request& req, const char* name) {
    if (!req.has_file(name)) return std::nullopt;
    return req.get_file_value(name).content;
}

json submit_response(const EditService& svc, const SubmitOutcome& out) {
    const EditJob j = svc.job(out.job_id);
    return json{{"job_id", j.job_id},
                {"status", to_string(j.status)},
                {"created", out.created},
                {"links", {{"self", "/edits/" + j.job_id}, {"rerun", "/edits/" + j.job_id + "/rerun"}}}};
}

}  // namespace

struct ServiceHttpServer::Impl {
    EditService& svc;
    httplib::Server server;
    explicit Impl(EditService& s) : svc(s) {}
};

ServiceHttpServer::ServiceHttpServer(EditService& service) : impl_(std::make_unique<Impl>(service)) {
    auto& srv = impl_->server;
    EditService& svc = service;
    // multipart framing on top of the image limit
    srv.set_payload_max_length(svc.config().max_upload_bytes + (1u << 20));
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, Idempotency-Key");
        res.status = 204;
    });

    srv.Post("/edits", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        if (!req.is_multipart_form_data())
            throw ServiceError(415, "validation", "expected multipart/form-data with an image part");
        SubmitRequest sr;
        if (req.has_file("image")) {
            const auto& content = req.get_file_value("image").content;
            sr.image_png.assign(content.begin(), content.end());
        }
        sr.instruction = form_text(req, "instruction").value_or("");
        sr.image_id = form_text(req, "image_id").value_or("");
        if (auto c = form_text(req, "config"); c && !c->empty()) {
            try {
                sr.config_overrides = json::parse(*c);
            } catch (const json::exception& e) {
                throw ServiceError(400, "validation", std::string("config is not valid JSON: ") + e.what());
            }
        }
        if (auto b = form_text(req, "before_caption"); b && !b->empty()) sr.overrides.before = *b;
        if (auto a = form_text(req, "after_caption"); a && !a->empty()) sr.overrides.after = *a;
        sr.idempotency_key = req.get_header_value("Idempotency-Key");
        const SubmitOutcome out = svc.submit(sr);
        res.set_header("Location", "/edits/" + out.job_id);
        send_json(res, out.created ? 202 : 200, submit_response(svc, out));
    }));

    srv.Get(R"(/edits/([0-9a-f]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, svc.job_view(req.matches[1]));
    }));

    srv.Post(R"(/edits/([0-9a-f]+)/rerun)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body.empty() ? "{}" : req.body);
        } catch (const json::exception& e) {
            throw ServiceError(400, "validation", std::string("body is not valid JSON: ") + e.what());
        }
        if (!body.is_object() || !body.contains("weight") || !body["weight"].is_number())
            throw ServiceError(400, "validation", "body must be {\"weight\": <number>}");
        const SubmitOutcome out = svc.rerun(req.matches[1], body["weight"].get<double>());
        res.set_header("Location", "/edits/" + out.job_id);
        send_json(res, out.created ? 202 : 200, submit_response(svc, out));
    }));

    srv.Get(R"(/images/([0-9a-f]+(?:-input)?))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const std::string etag = "\"" + id + "\"";
        res.set_header("Cache-Control", "public, max-age=31536000, immutable");
        res.set_header("ETag", etag);
        const auto bytes = svc.image(id);
        if (req.get_header_value("If-None-Match") == etag) {
            res.status = 304;
            return;
        }
        res.status = 200;
        res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    }));

    srv.Get("/health", guarded([&svc](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, svc.health());
    }));
    srv.Get("/config", guarded([&svc](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, svc.config_view());
    }));

    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty()) return;
        if (res.status == 404) send_error(res, 404, "not_found", "no such endpoint");
        else if (res.status == 413) send_error(res, 413, "payload_too_large", "request body exceeds the upload limit");
        else send_error(res, res.status, "http", httplib::status_message(res.status));
    });
}

ServiceHttpServer::~ServiceHttpServer() { stop(); }

int ServiceHttpServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port))
        throw ConfigError("port", "cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void ServiceHttpServer::listen() { impl_->server.listen_after_bind(); }

void ServiceHttpServer::stop() {
    if (impl_) impl_->server.stop();
}

void ServiceHttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace ddimedit
