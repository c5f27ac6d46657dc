"""Serve the (optionally adapter-equipped) student model behind the same
chat-completion wire format the pipeline's remote backends speak, so
`evaluate --backend student` needs nothing special.

Requests carry the whole prompt as a single user message; temperature 0 means
greedy decoding, so equal prompts get byte-identical completions.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel
from transformers import AutoModelForCausalLM, AutoTokenizer

from . import lora


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str = ""
    messages: list[ChatMessage]
    temperature: float = 0.0
    max_tokens: int = 512


@dataclass
class Generation:
    text: str
    prompt_tokens: int
    completion_tokens: int


class StudentEngine:
    def __init__(self, base_model_dir, adapter_dir=None, device: str = "cpu"):
        self.tokenizer = AutoTokenizer.from_pretrained(str(base_model_dir))
        self.model = AutoModelForCausalLM.from_pretrained(str(base_model_dir))
        self.adapter_dir = str(adapter_dir) if adapter_dir else None
        if adapter_dir is not None:
            lora.load_adapter(self.model, adapter_dir)
        self.model.to(device)
        self.model.eval()
        self.device = device
        self._lock = threading.Lock()  # greedy decoding is serialized; determinism per request

    def generate(self, prompt: str, temperature: float, max_tokens: int) -> Generation:
        encoded = self.tokenizer(prompt, return_tensors="pt").to(self.device)
        prompt_len = int(encoded.input_ids.shape[1])
        room = int(self.model.config.n_positions) - prompt_len - 1
        if room <= 0:
            raise ValueError(f"prompt of {prompt_len} tokens exceeds the model context window")
        kwargs = dict(
            max_new_tokens=max(1, min(max_tokens, room)),
            pad_token_id=self.tokenizer.pad_token_id,
            eos_token_id=self.tokenizer.eos_token_id,
        )
        if temperature <= 0:
            kwargs["do_sample"] = False
        else:
            kwargs.update(do_sample=True, temperature=temperature)
        with self._lock, torch.no_grad():
            output = self.model.generate(**encoded, **kwargs)
        new_tokens = output[0][prompt_len:]
        text = self.tokenizer.decode(new_tokens, skip_special_tokens=True).strip()
        return Generation(text=text, prompt_tokens=prompt_len, completion_tokens=int(new_tokens.shape[0]))


def create_app(engine: StudentEngine, served_model: str = "student") -> FastAPI:
    app = FastAPI(title="studentlab", docs_url=None, redoc_url=None)

    @app.get("/health")
    def health():
        return {"status": "ok", "model": served_model, "adapter": engine.adapter_dir}

    @app.post("/v1/chat/completions")
    def chat(request: ChatRequest):
        user_turns = [m.content for m in request.messages if m.role == "user"]
        if not user_turns:
            raise HTTPException(status_code=400, detail="no user message in request")
        try:
            gen = engine.generate(user_turns[-1], request.temperature, request.max_tokens)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {
            "id": "cmpl-student",
            "object": "chat.completion",
            "model": request.model or served_model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": gen.text},
                "finish_reason": "stop",
            }],
            "usage": {
                "prompt_tokens": gen.prompt_tokens,
                "completion_tokens": gen.completion_tokens,
                "total_tokens": gen.prompt_tokens + gen.completion_tokens,
            },
        }

    return app


def run_server(base_model_dir, adapter_dir, host: str, port: int, served_model: str = "student"):
    import uvicorn

    engine = StudentEngine(base_model_dir, adapter_dir)
    app = create_app(engine, served_model=served_model)
    uvicorn.run(app, host=host, port=port, log_level="warning")
