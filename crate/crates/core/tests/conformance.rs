//! Wire-protocol conformance of the mock across transports, and transport
//! failure modes.

use std::thread;
use std::time::Duration;

use alsc_cr::backend::{
    run_conformance, GatewayError, Handler, HttpTransport, InProcess, MockBackend, Request, Response, StdioTransport,
    Transport,
};

fn assert_all_pass(transport: &mut dyn Transport) {
    let dir = tempfile::tempdir().unwrap();
    let checks = run_conformance(transport, dir.path()).unwrap();
    assert_eq!(checks.len(), 8);
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn mock_in_process_passes_suite() {
    let mut t = InProcess::new(MockBackend::new(None).unwrap(), Duration::from_secs(60));
    assert_all_pass(&mut t);
}

/// Serve a handler over HTTP until a shutdown request; one JSON body per POST.
fn serve_http<H: Handler + Send + 'static>(mut handler: H, delay: Duration) -> (String, thread::JoinHandle<()>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", server.server_addr().to_ip().unwrap());
    let join = thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let mut body = String::new();
            request.as_reader().read_to_string(&mut body).unwrap();
            thread::sleep(delay);
            let (response, stop) = match serde_json::from_str::<Request>(&body) {
                Ok(Request::Shutdown) => (Response::ack(), true),
                Ok(req) => (handler.handle(req), false),
                Err(e) => (Response::error("BadRequest", e.to_string()), false),
            };
            let _ = request.respond(tiny_http::Response::from_string(
                serde_json::to_string(&response).unwrap(),
            ));
            if stop {
                break;
            }
        }
    });
    (url, join)
}

#[test]
fn mock_over_http_passes_suite() {
    let (url, join) = serve_http(MockBackend::new(None).unwrap(), Duration::ZERO);
    let mut t = HttpTransport::new(url, Duration::from_secs(30));
    assert_all_pass(&mut t);
    join.join().unwrap();
}

#[test]
fn http_timeout_and_unreachable() {
    let (url, _join) = serve_http(MockBackend::new(None).unwrap(), Duration::from_millis(800));
    let mut slow = HttpTransport::new(url, Duration::from_millis(100));
    assert!(matches!(slow.call(&Request::Ping), Err(GatewayError::Timeout(_))));

    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut dead = HttpTransport::new(format!("http://127.0.0.1:{port}/"), Duration::from_secs(2));
    assert!(matches!(
        dead.call(&Request::Ping),
        Err(GatewayError::BackendUnavailable(_))
    ));
}

#[test]
fn stdio_failure_modes() {
    // `cat` echoes the request, which is not a response.
    let mut echo = StdioTransport::spawn(vec!["cat".into()], Duration::from_secs(5)).unwrap();
    assert!(matches!(echo.call(&Request::Ping), Err(GatewayError::Protocol(_))));

    let mut silent = StdioTransport::spawn(vec!["sleep".into(), "5".into()], Duration::from_millis(200)).unwrap();
    assert!(matches!(silent.call(&Request::Ping), Err(GatewayError::Timeout(_))));

    assert!(StdioTransport::spawn(vec!["/nonexistent/backend".into()], Duration::from_secs(1)).is_err());
}
