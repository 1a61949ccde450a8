# src/main.py
from dotenv import load_dotenv
from fastapi import FastAPI
from fastapi.responses import RedirectResponse
from fastapi_mcp import FastApiMCP

from . import __version__
from .config import configure_logging

# ルーターのインポート (src/routersディレクトリから)
from .routers import codec, utility

# 環境変数を読み込む (プロジェクトルートの .env を想定)
load_dotenv()
configure_logging()

# FastAPIアプリケーションの初期化
app = FastAPI(
    title="HiNeRV Codec Server",
    description="HiNeRV ビットストリームの検査とフレーム復号を提供するサーバー。AI アシスタントからも MCP 経由で利用できます",
    version=__version__,
)

# 各ルーターをアプリケーションに登録
app.include_router(codec.router, prefix="/codec", tags=["Codec"])
app.include_router(utility.router, prefix="/utility", tags=["Utility"])

# MCPサーバーの設定とマウント
# FastApiMCPは既存のFastAPIエンドポイントを自動的にMCPツールとして公開します
mcp = FastApiMCP(
    app,
    name="HiNeRV Codec MCP Server",
    description="HiNeRV ビットストリームの一覧・構成とサイズ内訳の表示・フレーム復号を MCP 経由で操作します。",
    include_tags=["Codec", "Utility"],
    describe_all_responses=True,
    describe_full_response_schema=True,
)

mcp.mount()


@app.get("/", include_in_schema=False)
async def root_redirect():
    return RedirectResponse(url="/docs")


if __name__ == "__main__":
    import uvicorn
    # FastApiMCPはHTTPサーバーとして動作し、MCPプロトコルを/mcpエンドポイントで提供
    uvicorn.run(app, host="0.0.0.0", port=8000)
