//! The HTTP/1.1 transport: decodes requests for [`App::handle`] and encodes
//! its responses.

use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;

use axum::body::Body as AxumBody;
use axum::extract::{ConnectInfo, DefaultBodyLimit, FromRequest, Multipart, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response as AxumResponse};
use axum::{Extension, Router};
use hdb_core::ops::Form;
use tokio::io::{AsyncRead, AsyncWrite};
use tower_http::timeout::TimeoutLayer;

use crate::app::{App, Body, Request, Response, StartError, UploadContent, UploadPart, SESSION_COOKIE};
use crate::uploads::spool_file;

/// Cap on url-encoded bodies and on text fields of multipart bodies.
const FORM_LIMIT: usize = 16 << 20;

pub fn router(app: Arc<App>) -> Router {
    let timeout = app.config().request_timeout;
    Router::new()
        .fallback(entry)
        .layer(DefaultBodyLimit::disable())
        .layer(TimeoutLayer::with_status_code(StatusCode::REQUEST_TIMEOUT, timeout))
        .with_state(app)
}

fn session_cookie(headers: &HeaderMap) -> Option<String> {
    headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|kv| kv.trim().split_once('='))
        .find(|(k, _)| *k == SESSION_COOKIE)
        .map(|(_, v)| v.to_owned())
}

fn decode_pairs(bytes: &[u8]) -> Result<Form, StatusCode> {
    serde_urlencoded::from_bytes::<Vec<(String, String)>>(bytes)
        .map(|v| v.into_iter().collect())
        .map_err(|_| StatusCode::BAD_REQUEST)
}

fn plain(status: StatusCode, msg: &str) -> AxumResponse {
    (status, [(header::CONTENT_TYPE, "text/plain; charset=utf-8")], msg.to_owned()).into_response()
}

async fn read_multipart(app: &App, mut mp: Multipart, req: &mut Request) -> Result<(), AxumResponse> {
    let bad = |e: axum::extract::multipart::MultipartError| plain(e.status(), &e.body_text());
    let cap = app.config().upload_cap;
    let mut total: u64 = 0;
    while let Some(mut field) = mp.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_owned();
        match field.file_name().map(str::to_owned) {
            Some(file_name) => {
                let mut spool = spool_file(&app.config().upload_root)
                    .map_err(|e| plain(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()))?;
                while let Some(chunk) = field.chunk().await.map_err(bad)? {
                    total += chunk.len() as u64;
                    if total > cap {
                        return Err(plain(StatusCode::PAYLOAD_TOO_LARGE, "upload exceeds the size limit"));
                    }
                    spool.write_all(&chunk).map_err(|e| plain(StatusCode::INSUFFICIENT_STORAGE, &e.to_string()))?;
                }
                req.uploads.push(UploadPart { field: name, file_name, content: UploadContent::Spooled(spool) });
            }
            None => {
                let mut value = Vec::new();
                while let Some(chunk) = field.chunk().await.map_err(bad)? {
                    if value.len() + chunk.len() > FORM_LIMIT {
                        return Err(plain(StatusCode::PAYLOAD_TOO_LARGE, "form field too large"));
                    }
                    value.extend_from_slice(&chunk);
                }
                let value =
                    String::from_utf8(value).map_err(|_| plain(StatusCode::BAD_REQUEST, "form field is not UTF-8"))?;
                req.form.insert(name, value);
            }
        }
    }
    Ok(())
}

async fn entry(State(app): State<Arc<App>>, req: axum::extract::Request) -> AxumResponse {
    let peer =
        req.extensions().get::<ConnectInfo<SocketAddr>>().map(|c| c.0.ip()).unwrap_or(IpAddr::V4(Ipv4Addr::LOCALHOST));
    let mut hreq = Request::new(req.method().clone(), req.uri().path(), peer);
    if let Some(q) = req.uri().query() {
        match decode_pairs(q.as_bytes()) {
            Ok(f) => hreq.query = f,
            Err(s) => return plain(s, "malformed query string"),
        }
    }
    hreq.session = session_cookie(req.headers());
    let content_type =
        req.headers().get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("").to_ascii_lowercase();
    if content_type.starts_with("multipart/form-data") {
        match Multipart::from_request(req, &()).await {
            Ok(mp) => {
                if let Err(r) = read_multipart(&app, mp, &mut hreq).await {
                    return r;
                }
            }
            Err(e) => return e.into_response(),
        }
    } else if content_type.starts_with("application/x-www-form-urlencoded") {
        match axum::body::to_bytes(req.into_body(), FORM_LIMIT).await {
            Ok(bytes) => match decode_pairs(&bytes) {
                Ok(f) => hreq.form = f,
                Err(s) => return plain(s, "malformed form body"),
            },
            Err(_) => return plain(StatusCode::PAYLOAD_TOO_LARGE, "form body too large"),
        }
    }
    let app2 = app.clone();
    match tokio::task::spawn_blocking(move || app2.handle(hreq)).await {
        Ok(resp) => encode(resp).await,
        Err(e) => {
            tracing::error!("request handler failed: {e}");
            plain(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}

async fn encode(resp: Response) -> AxumResponse {
    let content_type = resp.content_type();
    let body = match resp.body {
        Body::Empty => AxumBody::empty(),
        Body::Html(s) => AxumBody::from(s),
        Body::Static { data, .. } => AxumBody::from(data),
        Body::File { file, .. } => {
            let file = tokio::fs::File::from_std(file);
            AxumBody::from_stream(tokio_util::io::ReaderStream::new(file))
        }
    };
    let mut out = AxumResponse::new(body);
    *out.status_mut() = resp.status;
    let headers = out.headers_mut();
    if let Ok(v) = content_type.parse() {
        headers.insert(header::CONTENT_TYPE, v);
    }
    for (name, value) in resp.headers {
        if let Ok(v) = value.parse() {
            headers.append(name, v);
        }
    }
    out
}

/// Binds the configured port and serves until the process ends.
pub async fn serve(app: Arc<App>) -> Result<(), StartError> {
    let port = app.config().port;
    let listener = tokio::net::TcpListener::bind((Ipv4Addr::UNSPECIFIED, port))
        .await
        .map_err(|source| StartError::PortInUse { port, source })?;
    serve_on(app, listener).await
}

pub async fn serve_on(app: Arc<App>, listener: tokio::net::TcpListener) -> Result<(), StartError> {
    tracing::info!("serving on {}", listener.local_addr()?);
    axum::serve(listener, router(app).into_make_service_with_connect_info::<SocketAddr>()).await?;
    Ok(())
}

/// Serves exactly one HTTP exchange over `io`, attributed to `peer`. The
/// client may close its sending half once the request is written.
pub async fn serve_one<IO>(app: Arc<App>, io: IO, peer: IpAddr) -> Result<(), StartError>
where
    IO: AsyncRead + AsyncWrite + Unpin + Send + 'static,
{
    let svc = router(app).layer(Extension(ConnectInfo(SocketAddr::new(peer, 0))));
    let svc = hyper_util::service::TowerToHyperService::new(svc);
    hyper::server::conn::http1::Builder::new()
        .keep_alive(false)
        .half_close(true)
        .serve_connection(hyper_util::rt::TokioIo::new(io), svc)
        .await
        .map_err(|e| StartError::Io(std::io::Error::other(e)))
}
