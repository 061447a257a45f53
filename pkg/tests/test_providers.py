import base64
import json
import subprocess
import sys

import httpx
import numpy as np
import pytest

from harcap.errors import BackendError, DimensionDrift, EmptyResponse, TransportError
from harcap.providers import (
    ChatMessage,
    HashEmbedder,
    ImagePart,
    OpenAIChat,
    OpenAIEmbedder,
    RuleChat,
    ScriptedChat,
    chat_payload,
    ChatParams,
)

USER = [ChatMessage("user", ("hello",))]


def transport(handler, log=None):
    def wrapped(request):
        if log is not None:
            log.append(request)
        return handler(request)
    return httpx.MockTransport(wrapped)


def chat_client(handler, log=None, **kw):
    return OpenAIChat("http://vlm.test", "gpt-test", backoff=0, transport=transport(handler, log), **kw)


class TestScriptedChat:
    def test_script_order(self):
        chat = ScriptedChat(["A person stands.", "The person wipes the counter."], model_id="script-1")
        assert chat.chat_complete(USER) == "A person stands."
        assert chat.chat_complete(USER) == "The person wipes the counter."
        assert chat.chat_complete(USER) == "The person wipes the counter."
        assert chat.calls == 3

    def test_empty_messages(self):
        with pytest.raises(ValueError):
            ScriptedChat(["x"]).chat_complete([])


class TestRuleChat:
    def test_first_matching_rule(self):
        chat = RuleChat([("MUST", "second"), ("label", "first")], default="none")
        assert chat.chat_complete([ChatMessage("user", ("label X",))]) == "first"
        assert chat.chat_complete([ChatMessage("user", ("label X MUST",))]) == "second"
        assert chat.chat_complete([ChatMessage("user", ("?",))]) == "none"

    def test_choice_depends_on_images(self):
        chat = RuleChat([("describe", ["a", "b", "c", "d", "e", "f"])])
        replies = {chat.chat_complete([ChatMessage("user", (ImagePart(bytes([i])), "describe"))])
                   for i in range(1, 30)}
        assert len(replies) > 1
        msg = [ChatMessage("user", (ImagePart(b"\x01"), "describe"))]
        assert chat.chat_complete(msg) == chat.chat_complete(msg)

    def test_no_rule_no_default(self):
        with pytest.raises(EmptyResponse):
            RuleChat([("x", "y")]).chat_complete(USER)


class TestMessages:
    def test_image_payload_must_be_non_empty(self):
        with pytest.raises(ValueError):
            ImagePart(b"")

    def test_message_needs_a_part(self):
        with pytest.raises(ValueError):
            ChatMessage("user", ())

    def test_wire_format(self, png_bytes):
        msgs = [ChatMessage("system", ("sys",)), ChatMessage("user", (ImagePart(png_bytes), "describe"))]
        body = chat_payload(msgs, ChatParams("m", 32, 0.0))
        assert body["model"] == "m" and body["temperature"] == 0.0 and body["max_tokens"] == 32
        assert body["messages"][0] == {"role": "system", "content": "sys"}
        img, text = body["messages"][1]["content"]
        assert img["type"] == "image_url"
        assert img["image_url"]["url"] == "data:image/png;base64," + base64.b64encode(png_bytes).decode()
        assert text == {"type": "text", "text": "describe"}


class TestOpenAIChat:
    def test_success_and_auth(self, monkeypatch):
        monkeypatch.setenv("HARCAP_API_KEY", "sekret")
        log = []
        chat = chat_client(lambda r: httpx.Response(200, json={"choices": [{"message": {"content": "hi"}}]}), log)
        assert chat.chat_complete(USER) == "hi"
        assert log[0].url.path == "/v1/chat/completions"
        assert log[0].headers["authorization"] == "Bearer sekret"
        assert json.loads(log[0].content)["temperature"] == 0.0

    def test_http_500_thrice(self):
        chat = chat_client(lambda r: httpx.Response(500, text="boom"))
        with pytest.raises(TransportError):
            chat.chat_complete(USER)
        assert chat.calls == 3

    def test_transient_then_success(self):
        replies = iter([httpx.Response(503), httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})])
        chat = chat_client(lambda r: next(replies))
        assert chat.chat_complete(USER) == "ok"
        assert chat.calls == 2

    def test_connection_errors_retried(self):
        def fail(request):
            raise httpx.ConnectError("refused", request=request)
        chat = chat_client(fail)
        with pytest.raises(TransportError):
            chat.chat_complete(USER)
        assert chat.calls == 3

    def test_empty_choices(self):
        chat = chat_client(lambda r: httpx.Response(200, json={"choices": []}))
        with pytest.raises(EmptyResponse):
            chat.chat_complete(USER)

    def test_client_error_not_retried(self):
        chat = chat_client(lambda r: httpx.Response(400, text="bad request"))
        with pytest.raises(BackendError) as info:
            chat.chat_complete(USER)
        assert info.value.status_code == 400 and chat.calls == 1

    def test_list_content(self):
        body = {"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]}
        assert chat_client(lambda r: httpx.Response(200, json=body)).chat_complete(USER) == "ab"


def embed_response(dims):
    def handler(request):
        texts = json.loads(request.content)["input"]
        return httpx.Response(200, json={"data": [{"index": i, "embedding": [0.5] * d}
                                                  for i, d in zip(range(len(texts)), dims)]})
    return handler


class TestOpenAIEmbedder:
    def test_embed_text(self):
        emb = OpenAIEmbedder("http://e.test", "mini", transport=transport(embed_response([384, 384])), backoff=0)
        out = emb.embed_text(["a", "b"])
        assert [v.dimension for v in out] == [384, 384]

    def test_dimension_drift(self):
        emb = OpenAIEmbedder("http://e.test", "mini", transport=transport(embed_response([384, 768])), backoff=0)
        with pytest.raises(DimensionDrift):
            emb.embed_text(["a", "b"])

    def test_tokens_one_request_each(self):
        log = []
        emb = OpenAIEmbedder("http://e.test", "mini", transport=transport(embed_response([8]), log), backoff=0)
        te = emb.embed_tokens("wash the cup")
        assert te.tokens == ["wash", "the", "cup"] and len(te.vectors) == 3
        assert [json.loads(r.content)["input"] for r in log] == [["wash"], ["the"], ["cup"]]

    def test_rejects_empty(self):
        emb = OpenAIEmbedder("http://e.test", "mini", transport=transport(embed_response([8])))
        with pytest.raises(ValueError):
            emb.embed_text([""])
        with pytest.raises(ValueError):
            emb.embed_tokens("")
        assert emb.calls == 0


class TestHashEmbedder:
    def test_identical_texts(self):
        a, b = HashEmbedder().embed_text(["x", "x"])
        assert np.array_equal(a.values, b.values)

    def test_unit_norm_and_dimension(self):
        for v in HashEmbedder().embed_text(["The person reads.", "a", "!!!"]):
            assert v.dimension == 384
            assert abs(np.linalg.norm(v.values) - 1.0) <= 1e-9

    def test_tokens(self):
        te = HashEmbedder().embed_tokens("wash the cup")
        assert te.tokens == ["wash", "the", "cup"] and len(te.vectors) == 3
        assert all(abs(np.linalg.norm(v.values) - 1) <= 1e-9 for v in te.vectors)

    def test_repeated_token_same_vector(self):
        te = HashEmbedder().embed_tokens("cup and cup")
        assert np.array_equal(te.vectors[0].values, te.vectors[2].values)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            HashEmbedder().embed_tokens("")

    def test_stable_across_processes(self):
        here = HashEmbedder().embed_text(["drinking tea"])[0].values[:4].tolist()
        code = ("from harcap.providers import HashEmbedder;"
                "print(HashEmbedder().embed_text(['drinking tea'])[0].values[:4].tolist())")
        there = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
        assert json.loads(there) == here

    def test_inputs_not_mutated(self):
        texts = ["a b", "c"]
        HashEmbedder().embed_text(texts)
        assert texts == ["a b", "c"]
