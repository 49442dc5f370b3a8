"""Operator command line.

Subcommands compose the library modules: the dealer produces triple
files (offline phase), users share weights, images and thresholds, the
two servers run predictions, and `oracle eval` replays the cleartext
pipeline for verification. Output is one JSON record per run on stdout;
errors print {"error": <class>, "message": ...} on stderr and map to
exit codes: 2 usage, 3 handshake/params mismatch, 4 protocol failure,
5 bad input data. No command ever prints secret material.

Share files carry a small header (magic, owner byte) followed by the
tensor encoding of `net`; weight share directories and triple files are
documented in `model` and `beaver`.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from pathlib import Path

import numpy as np

from .beaver import deal_triples, dump_store, write_triple_file
from .errors import (
    ChannelError,
    DecodeError,
    ManifestMismatch,
    ParamsMismatch,
    PrivEdgeError,
    ProtocolAborted,
    VersionMismatch,
)
from .fixedpoint import RingParams, encode
from .model import (
    load_model_dir,
    load_spec,
    save_share_dir,
    share_weights,
    triple_requests_for,
    validate_undercomplete,
)
from .net import decode_tensor, encode_tensor
from .oracle import oracle_predict
from .rng import RandomSource
from .service import PredictionServer, ServerConfig, request_prediction
from .sharing import ShareTensor, share

IMAGE_MAGIC = b"PVIS0001"
TAU_MAGIC = b"PVTS0001"

_EXIT_USAGE = 2
_EXIT_MISMATCH = 3
_EXIT_PROTOCOL = 4
_EXIT_DATA = 5


def _emit(record: dict):
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.flush()


def _fail(code: int, err_class: str, message: str):
    sys.stderr.write(json.dumps({"error": err_class, "message": message}) + "\n")
    sys.exit(code)


def _rng(args) -> RandomSource:
    seed = getattr(args, "seed", None)
    if seed is None and os.environ.get("PRIVEDGE_SEED"):
        seed = int(os.environ["PRIVEDGE_SEED"])
    return RandomSource(seed)


def _parse_addr(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def _load_image(path: Path, params: RingParams) -> np.ndarray:
    """Image file -> [w, h, c] ring tensor, pixels normalized by 255."""
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.dtype.kind in "ui":
            arr = arr.astype(np.float64) / 255.0
    else:
        from PIL import Image

        img = Image.open(path)
        arr = np.asarray(img, dtype=np.float64) / 255.0
        if arr.ndim == 2:
            arr = arr.T  # rows,cols -> x,y
        else:
            arr = np.transpose(arr, (1, 0, 2))
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return encode(arr, params)


def _write_share_file(path: Path, magic: bytes, tensor: ShareTensor):
    owner = 1 if tensor.owner == "s1" else 2
    Path(path).write_bytes(
        magic + struct.pack("<B", owner) + encode_tensor(tensor.data, tensor.params)
    )


def read_share_file(path, expect_magic: bytes, session: str = "service") -> ShareTensor:
    blob = Path(path).read_bytes()
    if blob[:8] != expect_magic:
        raise DecodeError(f"{path}: bad share file magic")
    (owner,) = struct.unpack_from("<B", blob, 8)
    data, params, off = decode_tensor(memoryview(blob), 9)
    if off != len(blob):
        raise DecodeError(f"{path}: trailing bytes")
    return ShareTensor(data, params, "s1" if owner == 1 else "s2", session)


# ---------------------------------------------------------------------------
# subcommands


def cmd_dealer_gen(args):
    rng = _rng(args)
    specs = []
    if args.spec:
        specs.append(load_spec(Path(args.spec).parent if args.spec.endswith(".json") else args.spec))
    else:
        for d in sorted(Path(args.models).iterdir()):
            if d.is_dir():
                specs.append(load_spec(d))
    if not specs:
        _fail(_EXIT_USAGE, "usage", "no model specs found")
    params = specs[0].params
    requests = []
    for spec in specs:
        if spec.params != params:
            _fail(_EXIT_DATA, "params_mismatch", "models disagree on ring params")
        for kind, shape, count in triple_requests_for(spec):
            requests.append((kind, shape, count * args.count))
    s1, s2 = deal_triples(requests, params, rng, "service")
    write_triple_file(args.out_s1, dump_store(s1), params)
    write_triple_file(args.out_s2, dump_store(s2), params)
    _emit(
        {
            "command": "dealer-gen",
            "models": len(specs),
            "predictions": args.count,
            "triples": s1.generated,
            "bytes_per_party": Path(args.out_s1).stat().st_size,
        }
    )


def cmd_share_weights(args):
    rng = _rng(args)
    ws = load_model_dir(args.model)
    validate_undercomplete(ws.spec)
    sh1, sh2 = share_weights(ws, rng, "service")
    save_share_dir(args.out_s1, sh1)
    save_share_dir(args.out_s2, sh2)
    _emit(
        {
            "command": "share-weights",
            "user_id": ws.spec.user_id,
            "layers": ws.spec.total_layers,
        }
    )


def cmd_share_image(args):
    rng = _rng(args)
    params = RingParams(args.k, args.f)
    image = _load_image(Path(args.img), params)
    s1, s2 = share(image, params, rng, "service")
    _write_share_file(args.out_s1, IMAGE_MAGIC, s1)
    _write_share_file(args.out_s2, IMAGE_MAGIC, s2)
    _emit({"command": "share-image", "shape": list(image.shape)})


def cmd_share_threshold(args):
    rng = _rng(args)
    params = RingParams(args.k, args.f)
    tau = encode(np.array([args.value]), params)
    s1, s2 = share(tau, params, rng, "service")
    _write_share_file(args.out_s1, TAU_MAGIC, s1)
    _write_share_file(args.out_s2, TAU_MAGIC, s2)
    _emit({"command": "share-threshold"})


def cmd_serve(args):
    listen_text = args.listen or os.environ.get("PRIVEDGE_LISTEN_ADDR")
    if not listen_text:
        _fail(_EXIT_USAGE, "usage", "need --listen or PRIVEDGE_LISTEN_ADDR")
    listen = _parse_addr(listen_text)
    peer = args.peer or os.environ.get("PRIVEDGE_PEER_ADDR")
    config = ServerConfig(
        role=args.role,
        models_dir=Path(args.models),
        triples_file=Path(args.triples),
        listen=listen,
        peer=_parse_addr(peer) if peer else None,
        ot_modulus_bits=args.ot_bits,
        parallel=args.parallel,
        timeout=args.timeout,
    )
    if args.role == "s1" and config.peer is None:
        _fail(_EXIT_USAGE, "usage", "s1 needs --peer (the regulator's address)")
    server = PredictionServer(config)
    _emit(
        {
            "command": "serve",
            "role": args.role,
            "port": server.port,
            "models": len(server.models),
            "triples": server.store.generated,
        }
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()


def cmd_predict(args):
    img1 = read_share_file(args.img_shares[0], IMAGE_MAGIC)
    img2 = read_share_file(args.img_shares[1], IMAGE_MAGIC)
    tau1 = read_share_file(args.threshold_shares[0], TAU_MAGIC)
    tau2 = read_share_file(args.threshold_shares[1], TAU_MAGIC)
    result = request_prediction(
        _parse_addr(args.s1),
        _parse_addr(args.s2),
        args.uploader,
        (img1, img2),
        (tau1, tau2),
        timeout=args.timeout,
        rng=_rng(args),
    )
    _emit(
        {
            "outcome": "none" if result.outcome is None else result.outcome,
            "decision": result.decision,
            "session": f"{result.session:032x}",
            "timings": {
                "offline_bytes": result.offline_bytes,
                "online_bytes": result.online_bytes,
                "online_ms": result.online_ms,
            },
        }
    )


def cmd_oracle_eval(args):
    weight_sets = []
    for d in sorted(Path(args.models).iterdir()):
        if d.is_dir():
            weight_sets.append(load_model_dir(d))
    if not weight_sets:
        _fail(_EXIT_USAGE, "usage", "no models found")
    params = weight_sets[0].spec.params
    image = _load_image(Path(args.img), params)
    tau = int(encode(np.array([args.tau]), params)[0])
    outcome, decision, _ = oracle_predict(weight_sets, image, tau, args.uploader)
    _emit(
        {
            "outcome": "none" if outcome is None else outcome,
            "decision": decision,
            "mode": "oracle",
        }
    )


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="privedge")
    sub = top.add_subparsers(dest="command", required=True)

    dealer = sub.add_parser("dealer", help="offline phase").add_subparsers(
        dest="sub", required=True
    )
    gen = dealer.add_parser("gen", help="deal multiplication triples to files")
    group = gen.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", help="one model directory or model.json")
    group.add_argument("--models", help="directory of registered model directories")
    gen.add_argument("--count", type=int, default=1, help="prediction budget")
    gen.add_argument("--out-s1", required=True)
    gen.add_argument("--out-s2", required=True)
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_dealer_gen)

    user = sub.add_parser("user", help="user-side sharing").add_subparsers(
        dest="sub", required=True
    )
    sw = user.add_parser("share-weights")
    sw.add_argument("--model", required=True, help="trained model directory")
    sw.add_argument("--out-s1", required=True)
    sw.add_argument("--out-s2", required=True)
    sw.add_argument("--seed", type=int)
    sw.set_defaults(func=cmd_share_weights)
    si = user.add_parser("share-image")
    si.add_argument("--img", required=True)
    si.add_argument("--out-s1", required=True)
    si.add_argument("--out-s2", required=True)
    si.add_argument("--k", type=int, default=64)
    si.add_argument("--f", type=int, default=16)
    si.add_argument("--seed", type=int)
    si.set_defaults(func=cmd_share_image)
    st = user.add_parser("share-threshold")
    st.add_argument("--value", type=float, required=True)
    st.add_argument("--out-s1", required=True)
    st.add_argument("--out-s2", required=True)
    st.add_argument("--k", type=int, default=64)
    st.add_argument("--f", type=int, default=16)
    st.add_argument("--seed", type=int)
    st.set_defaults(func=cmd_share_threshold)

    serve = sub.add_parser("serve", help="run a prediction endpoint")
    serve.add_argument("--role", choices=("s1", "s2"), required=True)
    serve.add_argument("--models", required=True)
    serve.add_argument("--triples", required=True)
    serve.add_argument("--listen", help="host:port (or PRIVEDGE_LISTEN_ADDR)")
    serve.add_argument("--peer", help="host:port of the other party (s1 only)")
    serve.add_argument("--ot-bits", type=int, default=2048)
    serve.add_argument("--parallel", action="store_true")
    serve.add_argument("--timeout", type=float, default=60.0)
    serve.set_defaults(func=cmd_serve)

    pred = sub.add_parser("predict", help="submit an upload for classification")
    pred.add_argument("--uploader", type=int, required=True)
    pred.add_argument("--img-shares", nargs=2, required=True, metavar=("S1", "S2"))
    pred.add_argument(
        "--threshold-shares", nargs=2, required=True, metavar=("S1", "S2")
    )
    pred.add_argument("--s1", required=True, help="service provider host:port")
    pred.add_argument("--s2", required=True, help="regulator host:port")
    pred.add_argument("--timeout", type=float, default=120.0)
    pred.add_argument("--seed", type=int)
    pred.set_defaults(func=cmd_predict)

    orc = sub.add_parser("oracle", help="cleartext verification").add_subparsers(
        dest="sub", required=True
    )
    ev = orc.add_parser("eval")
    ev.add_argument("--models", required=True, help="directory of plain model dirs")
    ev.add_argument("--img", required=True)
    ev.add_argument("--tau", type=float, required=True)
    ev.add_argument("--uploader", type=int, required=True)
    ev.set_defaults(func=cmd_oracle_eval)

    return top


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # optional config file: same keys as the long flags; explicit flags win
    if "--config" in argv:
        at = argv.index("--config")
        if at + 1 >= len(argv):
            _fail(_EXIT_USAGE, "usage", "--config needs a file path")
        config_path = argv[at + 1]
        del argv[at : at + 2]
        try:
            defaults = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            _fail(_EXIT_USAGE, "usage", f"bad config file: {exc}")
        for key, val in defaults.items():
            flag = "--" + str(key).replace("_", "-")
            if flag in argv:
                continue
            if isinstance(val, bool):
                if val:
                    argv.append(flag)
            elif isinstance(val, list):
                argv.append(flag)
                argv.extend(str(v) for v in val)
            else:
                argv.extend([flag, str(val)])
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return _EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        args.func(args)
        return 0
    except (VersionMismatch, ParamsMismatch, ManifestMismatch) as exc:
        _fail(_EXIT_MISMATCH, exc.code, str(exc))
    except ProtocolAborted as exc:
        # the peer's abort code picks the exit code
        text = str(exc)
        if "usage" in text:
            _fail(_EXIT_USAGE, "usage", text)
        if any(code in text for code in ("params_mismatch", "version_mismatch", "manifest_mismatch")):
            _fail(_EXIT_MISMATCH, "params_mismatch", text)
        _fail(_EXIT_PROTOCOL, exc.code, text)
    except ChannelError as exc:
        _fail(_EXIT_PROTOCOL, exc.code, str(exc))
    except (PrivEdgeError, OSError, OverflowError) as exc:
        _fail(_EXIT_DATA, getattr(exc, "code", "io_error"), str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
