// HTTP calls to the registry and prediction endpoints.

import { InterfaceDescription, PredictionResponse, ServiceRecord, parseInterface } from "./protocol.js";

export class ServerError extends Error {
  code: string;
  constructor(code: string, message: string) {
    super(message);
    this.code = code;
  }
}

async function jsonOrThrow(resp: Response): Promise<any> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const err = body?.error ?? {};
    throw new ServerError(err.code ?? "internal", err.message ?? `HTTP ${resp.status}`);
  }
  return body;
}

export async function discover(registryUrl: string): Promise<ServiceRecord[]> {
  const resp = await fetch(registryUrl.replace(/\/$/, "") + "/discover");
  const body = await jsonOrThrow(resp);
  return body.services ?? [];
}

export async function fetchInterface(serverUrl: string): Promise<InterfaceDescription> {
  const resp = await fetch(serverUrl.replace(/\/$/, "") + "/interface");
  return parseInterface(await jsonOrThrow(resp));
}

// XHR instead of fetch: upload progress events keep the UI honest during
// multi-hundred-megabyte volume uploads.
export function predict(
  serverUrl: string,
  body: FormData,
  onProgress?: (fraction: number) => void,
): Promise<PredictionResponse> {
  return new Promise((resolve, reject) => {
    const xhr = new XMLHttpRequest();
    xhr.open("POST", serverUrl.replace(/\/$/, "") + "/predict");
    xhr.responseType = "json";
    xhr.upload.onprogress = (e) => {
      if (e.lengthComputable && onProgress) onProgress(e.loaded / e.total);
    };
    xhr.onload = () => {
      if (xhr.status === 200) {
        resolve(xhr.response as PredictionResponse);
      } else {
        const err = xhr.response?.error ?? {};
        reject(new ServerError(err.code ?? "internal", err.message ?? `HTTP ${xhr.status}`));
      }
    };
    xhr.onerror = () => reject(new Error("network failure"));
    xhr.send(body);
  });
}
