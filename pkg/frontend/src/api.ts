/** Typed client for the submission service's JSON routes.
 *
 * The fetch implementation is injectable so tests can supply one with
 * cookie handling or canned responses; in the browser the default
 * same-origin fetch carries the session cookie automatically.
 */

export interface Diagnostic {
  kind: string;
  message: string;
  line: number;
  name: string | null;
}

export interface AuthorizeReply {
  authorize_url: string;
  state: string;
}

export interface TokenReply {
  status: string;
  username?: string;
}

export interface StatusReply {
  project: string;
  upstream: string;
  authenticated: boolean;
  version: string;
}

export type SubmitReply =
  | { result: "created"; url: string }
  | { result: "invalid"; diagnostics: Diagnostic[] }
  | { result: "error"; message: string };

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface SubmissionApi {
  authorize(): Promise<AuthorizeReply>;
  pollToken(): Promise<TokenReply>;
  signOut(): Promise<void>;
  submit(code: string, cellId?: number): Promise<SubmitReply>;
  status(): Promise<StatusReply>;
}

export class ApiError extends Error {
  constructor(message: string, readonly httpStatus: number) {
    super(message);
    this.name = "ApiError";
  }
}

const defaultFetch: FetchLike = (input, init) => fetch(input, init);

export class ApiClient implements SubmissionApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = defaultFetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (cause) {
      throw new ApiError(`service unreachable: ${String(cause)}`, 0);
    }
    try {
      return await response.json();
    } catch {
      throw new ApiError(`unexpected non-JSON reply (${response.status})`, response.status);
    }
  }

  async authorize(): Promise<AuthorizeReply> {
    return (await this.request("/assemble/auth/authorize")) as AuthorizeReply;
  }

  async pollToken(): Promise<TokenReply> {
    return (await this.request("/assemble/auth/token")) as TokenReply;
  }

  async signOut(): Promise<void> {
    await this.request("/assemble/auth/token", { method: "DELETE" });
  }

  async submit(code: string, cellId?: number): Promise<SubmitReply> {
    const body: Record<string, unknown> = { code_content: code };
    if (cellId !== undefined) {
      body.cell_id = cellId;
    }
    return (await this.request("/assemble/submit", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    })) as SubmitReply;
  }

  async status(): Promise<StatusReply> {
    return (await this.request("/assemble/status")) as StatusReply;
  }
}
